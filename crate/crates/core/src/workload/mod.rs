//! Open-loop request arrivals over call-graph templates.

mod arrivals;
mod template;

pub use arrivals::{generate_arrivals, write_arrivals_csv, ArrivalLaw, RequestEvent, WorkloadPhase, WorkloadSpec};
pub use template::{
    builtin_mix_alias, builtin_templates, compose_post, read_home_timeline, read_user_timeline, CallGraphTemplate,
    InvocationMode, TemplateEdge,
};
