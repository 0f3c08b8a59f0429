//! Deterministic data parallelism over index ranges.
//!
//! Work is cut into fixed-size chunks *before* any thread is involved, so
//! results never depend on the worker count: each chunk produces its own
//! output and callers reduce the chunk outputs in chunk order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

static THREAD_LIMIT: OnceLock<AtomicUsize> = OnceLock::new();

fn limit_cell() -> &'static AtomicUsize {
    THREAD_LIMIT.get_or_init(|| AtomicUsize::new(0))
}

/// Caps the worker count for all subsequent parallel sections.
/// Zero restores the default (available cores).
pub fn set_thread_limit(n: usize) {
    limit_cell().store(n, Ordering::SeqCst);
}

pub fn thread_limit() -> usize {
    let set = limit_cell().load(Ordering::SeqCst);
    if set > 0 {
        set
    } else {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    }
}

/// Splits `0..len` into chunks of `chunk` items (last chunk may be short).
pub fn chunk_ranges(len: usize, chunk: usize) -> Vec<std::ops::Range<usize>> {
    assert!(chunk > 0);
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + chunk).min(len);
        out.push(start..end);
        start = end;
    }
    out
}

/// Runs `work(chunk_index, range)` for every fixed-size chunk of `0..len`,
/// collecting outputs in chunk order. The chunk size, not the thread
/// count, decides the work decomposition, so output is identical for any
/// `--threads` setting.
pub fn map_chunks<R, F>(len: usize, chunk: usize, work: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize, std::ops::Range<usize>) -> R + Sync,
{
    let ranges = chunk_ranges(len, chunk);
    let n_chunks = ranges.len();
    if n_chunks == 0 {
        return Vec::new();
    }
    let workers = thread_limit().min(n_chunks);
    if workers <= 1 {
        return ranges
            .into_iter()
            .enumerate()
            .map(|(i, r)| work(i, r))
            .collect();
    }

    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = Vec::with_capacity(n_chunks);
    slots.resize_with(n_chunks, || None);
    let slots_ptr = SlotsPtr(slots.as_mut_ptr());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let ranges = &ranges;
            let next = &next;
            let work = &work;
            let slots_ptr = &slots_ptr;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= ranges.len() {
                    break;
                }
                let r = work(i, ranges[i].clone());
                // Each chunk index is claimed exactly once, so the slot
                // write is race-free.
                unsafe {
                    *slots_ptr.0.add(i) = Some(r);
                }
            });
        }
    });

    slots
        .into_iter()
        .map(|s| s.expect("chunk result missing"))
        .collect()
}

struct SlotsPtr<R>(*mut Option<R>);
unsafe impl<R: Send> Sync for SlotsPtr<R> {}
unsafe impl<R: Send> Send for SlotsPtr<R> {}
