pub mod env;
pub mod error;
pub mod keys;
pub mod table;

pub use env::{Env, FaultInjector, IoSnapshot, IoStats, WriteKind};
pub use error::{Error, Result};
pub use table::{CursorOffset, KVEntry, Table, TableId};
pub mod remix;
pub use remix::{RemixIterator, RemixView, SearchMode};
pub mod memwal;
pub mod compact;
pub mod store;

pub use store::{Store, StoreConfig, StoreIterator};
