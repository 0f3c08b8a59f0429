//! Minimal JSON reader and writer.
//!
//! Covers exactly what the file formats of this crate need: objects,
//! arrays, strings, integers, floats, booleans and null. Integers are
//! kept as `i128` so 64-bit seeds survive a round trip unchanged.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i128),
    Float(f64),
    Str(String),
    Array(Vec<Value>),
    Object(BTreeMap<String, Value>),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) => i64::try_from(*i).ok(),
            _ => None,
        }
    }
    pub fn as_u64(&self) -> Option<u64> {
        match self {
            Value::Int(i) => u64::try_from(*i).ok(),
            _ => None,
        }
    }
    pub fn as_usize(&self) -> Option<usize> {
        self.as_u64().and_then(|v| usize::try_from(v).ok())
    }
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }
    pub fn as_array(&self) -> Option<&[Value]> {
        match self {
            Value::Array(a) => Some(a),
            _ => None,
        }
    }
    pub fn as_object(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Object(o) => Some(o),
            _ => None,
        }
    }
    /// Looks up a required object field.
    pub fn field(&self, name: &str) -> Result<&Value> {
        self.as_object()
            .and_then(|o| o.get(name))
            .ok_or_else(|| Error::data(format!("missing JSON field '{name}'")))
    }
}

pub fn parse(text: &str) -> Result<Value> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
    };
    p.skip_ws();
    let v = p.value()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(Error::data(format!(
            "trailing characters in JSON at byte {}",
            p.pos
        )));
    }
    Ok(v)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Result<u8> {
        let b = self
            .peek()
            .ok_or_else(|| Error::data("unexpected end of JSON"))?;
        self.pos += 1;
        Ok(b)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, b: u8) -> Result<()> {
        let got = self.bump()?;
        if got != b {
            return Err(Error::data(format!(
                "expected '{}' at byte {}, found '{}'",
                b as char,
                self.pos - 1,
                got as char
            )));
        }
        Ok(())
    }

    fn literal(&mut self, lit: &str, v: Value) -> Result<Value> {
        if self.bytes[self.pos..].starts_with(lit.as_bytes()) {
            self.pos += lit.len();
            Ok(v)
        } else {
            Err(Error::data(format!("invalid JSON literal at byte {}", self.pos)))
        }
    }

    fn value(&mut self) -> Result<Value> {
        match self.peek() {
            Some(b'{') => self.object(),
            Some(b'[') => self.array(),
            Some(b'"') => Ok(Value::Str(self.string()?)),
            Some(b't') => self.literal("true", Value::Bool(true)),
            Some(b'f') => self.literal("false", Value::Bool(false)),
            Some(b'n') => self.literal("null", Value::Null),
            Some(_) => self.number(),
            None => Err(Error::data("unexpected end of JSON")),
        }
    }

    fn object(&mut self) -> Result<Value> {
        self.expect(b'{')?;
        let mut map = BTreeMap::new();
        self.skip_ws();
        if self.peek() == Some(b'}') {
            self.pos += 1;
            return Ok(Value::Object(map));
        }
        loop {
            self.skip_ws();
            let key = self.string()?;
            self.skip_ws();
            self.expect(b':')?;
            self.skip_ws();
            let val = self.value()?;
            map.insert(key, val);
            self.skip_ws();
            match self.bump()? {
                b',' => continue,
                b'}' => return Ok(Value::Object(map)),
                c => {
                    return Err(Error::data(format!(
                        "expected ',' or '}}' in object, found '{}'",
                        c as char
                    )))
                }
            }
        }
    }

    fn array(&mut self) -> Result<Value> {
        self.expect(b'[')?;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(Value::Array(items));
        }
        loop {
            self.skip_ws();
            items.push(self.value()?);
            self.skip_ws();
            match self.bump()? {
                b',' => continue,
                b']' => return Ok(Value::Array(items)),
                c => {
                    return Err(Error::data(format!(
                        "expected ',' or ']' in array, found '{}'",
                        c as char
                    )))
                }
            }
        }
    }

    fn string(&mut self) -> Result<String> {
        self.expect(b'"')?;
        let mut out = String::new();
        loop {
            let b = self.bump()?;
            match b {
                b'"' => return Ok(out),
                b'\\' => match self.bump()? {
                    b'"' => out.push('"'),
                    b'\\' => out.push('\\'),
                    b'/' => out.push('/'),
                    b'b' => out.push('\u{0008}'),
                    b'f' => out.push('\u{000C}'),
                    b'n' => out.push('\n'),
                    b'r' => out.push('\r'),
                    b't' => out.push('\t'),
                    b'u' => {
                        let mut code = 0u32;
                        for _ in 0..4 {
                            let h = self.bump()?;
                            code = code * 16
                                + (h as char)
                                    .to_digit(16)
                                    .ok_or_else(|| Error::data("bad \\u escape"))?;
                        }
                        out.push(
                            char::from_u32(code)
                                .ok_or_else(|| Error::data("bad unicode escape"))?,
                        );
                    }
                    c => {
                        return Err(Error::data(format!("bad escape '\\{}'", c as char)));
                    }
                },
                _ => {
                    // Collect the full UTF-8 sequence starting at b.
                    if b < 0x80 {
                        out.push(b as char);
                    } else {
                        let start = self.pos - 1;
                        let width = if b >= 0xF0 {
                            4
                        } else if b >= 0xE0 {
                            3
                        } else {
                            2
                        };
                        let end = start + width;
                        if end > self.bytes.len() {
                            return Err(Error::data("truncated UTF-8 in JSON string"));
                        }
                        let s = std::str::from_utf8(&self.bytes[start..end])
                            .map_err(|_| Error::data("invalid UTF-8 in JSON string"))?;
                        out.push_str(s);
                        self.pos = end;
                    }
                }
            }
        }
    }

    fn number(&mut self) -> Result<Value> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.pos += 1;
        }
        let mut is_float = false;
        while let Some(b) = self.peek() {
            match b {
                b'0'..=b'9' => self.pos += 1,
                b'.' | b'e' | b'E' | b'+' | b'-' => {
                    is_float = true;
                    self.pos += 1;
                }
                _ => break,
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::data("invalid number"))?;
        if is_float {
            text.parse::<f64>()
                .map(Value::Float)
                .map_err(|_| Error::data(format!("invalid JSON number '{text}'")))
        } else {
            text.parse::<i128>()
                .map(Value::Int)
                .map_err(|_| Error::data(format!("invalid JSON integer '{text}'")))
        }
    }
}

/// Incremental JSON writer producing deterministic, compact output.
pub struct Writer {
    out: String,
    stack: Vec<bool>, // true = item already written at this level
}

impl Default for Writer {
    fn default() -> Self {
        Self::new()
    }
}

impl Writer {
    pub fn new() -> Self {
        Writer {
            out: String::new(),
            stack: Vec::new(),
        }
    }

    fn comma(&mut self) {
        if let Some(started) = self.stack.last_mut() {
            if *started {
                self.out.push(',');
            }
            *started = true;
        }
    }

    pub fn begin_object(&mut self) -> &mut Self {
        self.comma();
        self.out.push('{');
        self.stack.push(false);
        self
    }
    pub fn end_object(&mut self) -> &mut Self {
        self.stack.pop();
        self.out.push('}');
        self
    }
    pub fn begin_array(&mut self) -> &mut Self {
        self.comma();
        self.out.push('[');
        self.stack.push(false);
        self
    }
    pub fn end_array(&mut self) -> &mut Self {
        self.stack.pop();
        self.out.push(']');
        self
    }
    pub fn key(&mut self, k: &str) -> &mut Self {
        self.comma();
        write_escaped(&mut self.out, k);
        self.out.push(':');
        // A key does not count as a completed item; suppress the comma
        // the upcoming value would otherwise emit.
        if let Some(started) = self.stack.last_mut() {
            *started = false;
        }
        self
    }
    pub fn str(&mut self, s: &str) -> &mut Self {
        self.comma();
        write_escaped(&mut self.out, s);
        self
    }
    pub fn int(&mut self, v: i128) -> &mut Self {
        self.comma();
        let _ = write!(self.out, "{v}");
        self
    }
    pub fn uint(&mut self, v: u64) -> &mut Self {
        self.comma();
        let _ = write!(self.out, "{v}");
        self
    }
    pub fn float(&mut self, v: f64) -> &mut Self {
        self.comma();
        if v.is_finite() {
            // `{:?}` prints the shortest string that round-trips.
            let _ = write!(self.out, "{v:?}");
        } else {
            self.out.push_str("null");
        }
        self
    }
    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.comma();
        self.out.push_str(if v { "true" } else { "false" });
        self
    }

    pub fn finish(self) -> String {
        self.out
    }
}

fn write_escaped(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sidecar_shape() {
        let v = parse(
            r#"{"lines":2,"samples":3,"bands":4,"dtype":"f64","interleave":"bip","byte_order":"le"}"#,
        )
        .unwrap();
        assert_eq!(v.field("lines").unwrap().as_usize(), Some(2));
        assert_eq!(v.field("dtype").unwrap().as_str(), Some("f64"));
    }

    #[test]
    fn integers_round_trip_exactly() {
        let seed: u64 = u64::MAX - 12345;
        let mut w = Writer::new();
        w.begin_object().key("seed").uint(seed).end_object();
        let text = w.finish();
        let v = parse(&text).unwrap();
        assert_eq!(v.field("seed").unwrap().as_u64(), Some(seed));
    }

    #[test]
    fn floats_round_trip() {
        for &x in &[0.05, 1e-8, -3.25, 123456.789, 2.2250738585072014e-308] {
            let mut w = Writer::new();
            w.begin_array().float(x).end_array();
            let v = parse(&w.finish()).unwrap();
            assert_eq!(v.as_array().unwrap()[0].as_f64(), Some(x));
        }
    }

    #[test]
    fn nested_structures() {
        let v = parse(r#"{"a":[1,2,{"b":true}],"c":null,"d":"x\ny"}"#).unwrap();
        let a = v.field("a").unwrap().as_array().unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a[2].field("b").unwrap(), &Value::Bool(true));
        assert_eq!(v.field("d").unwrap().as_str(), Some("x\ny"));
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse("{").is_err());
        assert!(parse("[1,]").is_err());
        assert!(parse("{\"a\":1}x").is_err());
        assert!(parse("tru").is_err());
    }

    #[test]
    fn string_escapes() {
        let mut w = Writer::new();
        w.str("a\"b\\c\nd");
        let text = w.finish();
        let v = parse(&text).unwrap();
        assert_eq!(v.as_str(), Some("a\"b\\c\nd"));
    }
}
