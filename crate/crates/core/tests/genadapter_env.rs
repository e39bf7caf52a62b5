//! Lives in its own test binary: it mutates the process environment.

use ragpipe_core::genadapter::{generate, TIMEOUT_ENV};
use ragpipe_core::{Error, GeneratorContract, SpecialIds, TokenSeq};

#[test]
fn environment_overrides_timeout() {
    let specials = SpecialIds {
        sep: 0,
        mask: 1,
        pad: 2,
        buckets: vec![3],
    };
    let inputs = vec![("a".to_string(), TokenSeq(vec![5, 6]))];
    let gc = GeneratorContract::ExternalCommand {
        command: "sleep 3".into(),
        timeout_secs: 600.0,
    };
    std::env::set_var(TIMEOUT_ENV, "0.3");
    let err = generate(&inputs, &gc, &specials).unwrap_err();
    assert!(matches!(err, Error::Generator(ref m) if m.contains("timed out after 0.3s")), "{err:?}");

    std::env::set_var(TIMEOUT_ENV, "soon");
    assert!(matches!(generate(&inputs, &gc, &specials), Err(Error::InvalidConfig(_))));
    std::env::remove_var(TIMEOUT_ENV);
}
