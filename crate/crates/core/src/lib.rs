//! A workbench for the hybrid pi-calculus.
//!
//! The crate is organised bottom-up:
//!
//! * [`syntax`]: terms, names, substitution, congruence;
//! * [`parser`]: the textual model format and pretty printer;
//! * [`flows`]: evaluation, states, flows and contracts;
//! * [`kernel`]: discrete transitions and continuous evolution;
//! * [`sim`]: closed-system simulation, traces, Zeno detection;
//! * [`equiv`]: labelled transition systems, bisimulations, co-simulation, discretization;
//! * [`cert`]: hybrid automata and barrier-certificate checking;
//! * [`zoo`]: bundled models and the train control law.

pub mod cert;
pub mod equiv;
pub mod flows;
pub mod kernel;
pub mod parser;
pub mod sim;
pub mod syntax;
pub mod zoo;

pub use flows::{eval_bool, eval_expr, Contract, Flow, State, Tri, Value};
pub use kernel::{Agent, IntegratorConfig, Label, Transition};
pub use parser::{parse, pretty, ModelFile, ParseError};
pub use sim::{simulate, Policy, SimConfig, SimResult, Trace};
pub use syntax::{
    alpha_equivalent, free_names, struct_congruent, substitute, BoolExpr, Expr, Name, Ode, Polarity, Prefix,
    Process, ReadySet, Subst,
};
