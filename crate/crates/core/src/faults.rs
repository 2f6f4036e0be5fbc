//! Named crash points for fault-injection drills.
//!
//! Setting `DMARF_CRASH_AT=<point>` makes the process abort the first time it
//! reaches that point, which is how the tests land a crash between two
//! specific steps.

use std::sync::OnceLock;

pub const CRASH_ENV: &str = "DMARF_CRASH_AT";

static TARGET: OnceLock<Option<String>> = OnceLock::new();

pub fn hit(point: &str) {
    let target = TARGET.get_or_init(|| std::env::var(CRASH_ENV).ok());
    if target.as_deref() == Some(point) {
        eprintln!("crash point `{point}` reached; aborting");
        std::process::abort();
    }
}
