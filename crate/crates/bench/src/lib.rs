pub use limao_core;
