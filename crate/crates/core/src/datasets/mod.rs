//! Dataset generators, encoders and file formats.

pub mod clauses;
pub mod container;
pub mod graph;
pub mod padding;
pub mod puzzle;
pub mod scenario;

pub use clauses::{enumerate_clauses, BodyOrder, ClauseExample, Term};
pub use container::{load_setd, read_setd, save_setd, write_csv, write_setd, SetDataset};
pub use graph::{load_edge_list, KnowledgeGraph};
pub use padding::{drop_elements, pad_with_dummies, strip_dummies};
pub use puzzle::{encode_puzzle_state, sample_states, PuzzleState};
pub use scenario::{arrange_pairs, make_scenario, split_train_test, Pairs, RowOrder, ScenarioConfig};
