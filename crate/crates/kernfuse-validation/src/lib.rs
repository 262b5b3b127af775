//! Holds the `acceptance` test target. Run it with
//! `cargo test -p kernfuse-validation --test acceptance`; it prints one
//! PASS or FAIL line per check and exits nonzero if any check fails.
