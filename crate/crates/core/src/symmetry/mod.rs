//! Isomorphisms, automorphism groups, labelings, pushforwards and normal
//! forms.

mod iso;
mod normal_form;
mod search;

pub use iso::{
    check_isomorphism, is_isomorphism, pushforward, pushforward_local, relabel, sample_labeling, Condition,
    Isomorphism, Labeling, Perms, Violation, ISO_TOLERANCE,
};
pub use normal_form::{normal_form, NormalForm};
pub use search::{
    agent_orbits, all_labelings, automorphisms_by_exhaustion, count_isomorphisms, enumerate_automorphisms, enumerate_isomorphisms, first_isomorphism,
    search_isomorphisms, AutGroup, DEFAULT_NODE_CAP, LIST_LIMIT,
};
pub(crate) use search::permutations;
