//! SIGINT handling for long training runs.

use std::sync::atomic::{AtomicBool, Ordering};

static REQUESTED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_sigint(_: libc::c_int) {
    REQUESTED.store(true, Ordering::SeqCst);
}

/// Routes SIGINT to a flag instead of terminating, and returns the flag.
/// A second SIGINT after the flag is set still only sets the flag; the
/// training loop stops after its current step.
pub fn install() -> &'static AtomicBool {
    // SAFETY: the handler only performs an atomic store, which is
    // async-signal-safe.
    unsafe {
        libc::signal(libc::SIGINT, on_sigint as extern "C" fn(libc::c_int) as libc::sighandler_t);
    }
    &REQUESTED
}
