pub mod perfmodel;
pub mod routing;
pub mod sim;
pub mod techmodel;
pub mod topology;
pub mod verify;

// The guide in `book/` is compiled and run as doc-tests of this crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/stacks.md")]
    mod stacks {}
    #[doc = include_str!("../../../book/src/technology.md")]
    mod technology {}
    #[doc = include_str!("../../../book/src/routing.md")]
    mod routing {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
}
