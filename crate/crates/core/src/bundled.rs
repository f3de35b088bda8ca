//! Example problems shipped with the library.

use crate::error::Result;
use crate::format::parse_problem;
use crate::problem::ProblemSpec;

pub const E1: &str = include_str!("../problems/e1.floq");
pub const E2: &str = include_str!("../problems/e2.floq");
pub const E3: &str = include_str!("../problems/e3.floq");
pub const E4: &str = include_str!("../problems/e4.floq");
pub const E4_PI: &str = include_str!("../problems/e4_pi.floq");
pub const E5: &str = include_str!("../problems/e5.floq");
pub const E5_PERIODIC: &str = include_str!("../problems/e5_periodic.floq");
pub const MATHIEU: &str = include_str!("../problems/mathieu.floq");
pub const SCALAR_ONE: &str = include_str!("../problems/scalar_one.floq");

/// `(name, source)` for every bundled problem.
pub const ALL: [(&str, &str); 9] = [
    ("e1", E1),
    ("e2", E2),
    ("e3", E3),
    ("e4", E4),
    ("e4_pi", E4_PI),
    ("e5", E5),
    ("e5_periodic", E5_PERIODIC),
    ("mathieu", MATHIEU),
    ("scalar_one", SCALAR_ONE),
];

pub fn source(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Option<Result<ProblemSpec>> {
    source(name).map(parse_problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_parse() {
        for (name, text) in ALL {
            assert!(parse_problem(text).is_ok(), "{name}");
        }
    }
}
