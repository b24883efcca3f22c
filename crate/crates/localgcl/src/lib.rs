//! Self-supervised learning on graphs with a shared GNN encoder trained by two
//! objectives at once: a global contrastive loss (NT-Xent over augmented graph
//! views) and a local masked-feature-reconstruction loss, mixed by a scheduled
//! weight λ.
//!
//! The crate is self-contained: it ships its own dense reverse-mode autodiff
//! engine ([`diff`]), a TUDataset-format loader ([`data`]), graph augmentations
//! ([`augment`]), GIN/GCN encoders with projection and decoder heads
//! ([`model`]), the losses and λ schedules ([`objective`]), the training loop
//! with checkpointing ([`trainer`]), and downstream evaluation — linear-probe
//! graph classification and an embedding-shift probe ([`eval`]).
//!
//! Typical flow:
//!
//! ```no_run
//! use localgcl::trainer::{train, TrainConfig};
//! use localgcl::eval::{embed_dataset, linear_probe};
//! use localgcl::data::parse_tudataset;
//!
//! let mut cfg = TrainConfig::default();
//! cfg.data_dir = "data".into();
//! cfg.dataset = "MUTAG".into();
//! let out = train(&cfg).unwrap();
//! let ds = parse_tudataset("data/MUTAG".as_ref(), "MUTAG").unwrap();
//! let z = embed_dataset(&out.params, &ds).unwrap();
//! let labels: Vec<usize> = ds.graphs.iter().map(|g| g.label.unwrap()).collect();
//! let report = linear_probe(&z, &labels, 10, 0).unwrap();
//! println!("{} {:.2}±{:.2}", ds.name, 100.0 * report.mean, 100.0 * report.std);
//! ```

pub mod augment;
pub mod data;
pub mod diff;
pub mod eval;
pub mod matrix;
pub mod model;
pub mod objective;
pub mod seeding;
pub mod trainer;
