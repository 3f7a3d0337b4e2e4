pub mod benchmark;
pub mod fit;
pub mod reduce;
pub mod select_dim;
pub mod ses_index;
pub mod simulate;
