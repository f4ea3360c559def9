//! Allocation accounting for memory benchmarks.
//!
//! Install in a binary with
//! `#[global_allocator] static ALLOC: PeakAlloc = PeakAlloc;`. Without it the
//! counters stay at zero and [`MemoryProbe`] falls back to sampling the
//! process resident set.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static ACTIVE: AtomicBool = AtomicBool::new(false);

/// System allocator that tracks live and peak heap bytes.
pub struct PeakAlloc;

fn grow(n: usize) {
    let now = CURRENT.fetch_add(n, Ordering::Relaxed) + n;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

unsafe impl GlobalAlloc for PeakAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            ACTIVE.store(true, Ordering::Relaxed);
            grow(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc_zeroed(layout) };
        if !p.is_null() {
            ACTIVE.store(true, Ordering::Relaxed);
            grow(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size >= layout.size() {
                grow(new_size - layout.size());
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

impl PeakAlloc {
    /// Whether this allocator is installed and has served allocations.
    pub fn is_active() -> bool {
        ACTIVE.load(Ordering::Relaxed)
    }

    pub fn current() -> usize {
        CURRENT.load(Ordering::Relaxed)
    }

    pub fn peak() -> usize {
        PEAK.load(Ordering::Relaxed)
    }

    /// Restarts peak tracking from the current live size.
    pub fn reset_peak() {
        PEAK.store(CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
    }
}

/// Resident set size in bytes from `/proc/self/statm`, if available.
pub fn resident_bytes() -> Option<usize> {
    let text = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: usize = text.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * 4096)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryMethod {
    Allocator,
    ResidentSet,
}

/// Measures the extra peak memory of a closure over the memory live before it.
pub struct MemoryProbe;

impl MemoryProbe {
    pub fn method() -> MemoryMethod {
        if PeakAlloc::is_active() {
            MemoryMethod::Allocator
        } else {
            MemoryMethod::ResidentSet
        }
    }

    /// Runs `f` and returns its result with the bytes it added at peak.
    /// Resident-set fallback only sees growth visible after `f` returns.
    pub fn measure<T>(f: impl FnOnce() -> T) -> (T, usize) {
        match Self::method() {
            MemoryMethod::Allocator => {
                let before = PeakAlloc::current();
                PeakAlloc::reset_peak();
                let out = f();
                (out, PeakAlloc::peak().saturating_sub(before))
            }
            MemoryMethod::ResidentSet => {
                let before = resident_bytes().unwrap_or(0);
                let out = f();
                (out, resident_bytes().unwrap_or(0).saturating_sub(before))
            }
        }
    }
}
