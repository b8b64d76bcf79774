//! The guide's chapters, included here so that `cargo test` runs every
//! Rust snippet in them.

macro_rules! chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub mod $name {}
        )*
    };
}

chapters! {
    introduction => "introduction.md",
    data => "data.md",
    denoising => "denoising.md",
    graphs => "graphs.md",
    recurrence => "recurrence.md",
    training => "training.md",
    backtest => "backtest.md",
    checkpoints => "checkpoints.md",
    cli => "cli.md",
}
