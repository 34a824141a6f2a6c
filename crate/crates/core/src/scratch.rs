//! Thread-local pool of zeroed coefficient buffers for hot loops. Operator
//! applications need several vectors of a few hundred kilobytes each; taking
//! them from the pool avoids an mmap/munmap pair per call.

use std::cell::RefCell;
use std::ops::{Deref, DerefMut};

use num_complex::Complex64 as C64;

const MAX_POOLED: usize = 64;

thread_local! {
    static POOL: RefCell<Vec<Vec<C64>>> = const { RefCell::new(Vec::new()) };
}

/// A zeroed buffer that returns to the pool when dropped.
pub(crate) struct Buf(Vec<C64>);

/// Takes a zeroed buffer of length `len` from the pool.
pub(crate) fn zeroed(len: usize) -> Buf {
    let v = POOL.with(|p| {
        let mut p = p.borrow_mut();
        match p.iter().position(|v| v.capacity() >= len) {
            Some(i) => p.swap_remove(i),
            None => Vec::new(),
        }
    });
    let mut v = v;
    v.clear();
    v.resize(len, C64::default());
    Buf(v)
}

/// Takes a buffer holding a copy of `src`.
pub(crate) fn copied(src: &[C64]) -> Buf {
    let mut b = zeroed(src.len());
    b.copy_from_slice(src);
    b
}

impl Deref for Buf {
    type Target = [C64];

    fn deref(&self) -> &[C64] {
        &self.0
    }
}

impl DerefMut for Buf {
    fn deref_mut(&mut self) -> &mut [C64] {
        &mut self.0
    }
}

impl<'a> IntoIterator for &'a Buf {
    type Item = &'a C64;
    type IntoIter = std::slice::Iter<'a, C64>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl Drop for Buf {
    fn drop(&mut self) {
        let v = std::mem::take(&mut self.0);
        if v.capacity() == 0 {
            return;
        }
        // try_with: the pool may already be gone during thread teardown.
        let _ = POOL.try_with(|p| {
            let mut p = p.borrow_mut();
            if p.len() < MAX_POOLED {
                p.push(v);
            }
        });
    }
}
