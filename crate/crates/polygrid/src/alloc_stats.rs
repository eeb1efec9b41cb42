//! Allocation accounting for the memory-complexity checks.
//!
//! [`TrackingAllocator`] wraps the system allocator and keeps global
//! counters of live and peak-live bytes. Binaries that want accounting
//! install it as the global allocator:
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: polygrid::alloc_stats::TrackingAllocator = polygrid::alloc_stats::TrackingAllocator;
//! ```
//!
//! `measure_transient` then reports the peak allocation growth over a
//! closure, which is how the streaming kernels' `Theta(J)` transient
//! workspace claim is checked: run forward+backward, subtract the bytes
//! that were live before, and compare across key counts.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

pub struct TrackingAllocator;

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let ptr = System.alloc(layout);
        if !ptr.is_null() {
            track_alloc(layout.size());
        }
        ptr
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let new_ptr = System.realloc(ptr, layout, new_size);
        if !new_ptr.is_null() {
            LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
            track_alloc(new_size);
        }
        new_ptr
    }
}

#[inline]
fn track_alloc(size: usize) {
    let live = LIVE.fetch_add(size, Ordering::Relaxed) + size;
    PEAK.fetch_max(live, Ordering::Relaxed);
}

/// Bytes currently allocated (zero unless the tracking allocator is the
/// installed global allocator).
pub fn live_bytes() -> usize {
    LIVE.load(Ordering::Relaxed)
}

/// Reset the peak to the current live count.
pub fn reset_peak() {
    PEAK.store(LIVE.load(Ordering::Relaxed), Ordering::Relaxed);
}

pub fn peak_bytes() -> usize {
    PEAK.load(Ordering::Relaxed)
}

/// Run `f` and report how far the live-byte count rose above its starting
/// point (the transient workspace of `f`, including anything it returns).
pub fn measure_transient<T>(f: impl FnOnce() -> T) -> (T, usize) {
    let before = live_bytes();
    reset_peak();
    let out = f();
    let peak = peak_bytes();
    (out, peak.saturating_sub(before))
}
