//! Drought-eligibility and insurance-cost pipeline over trajectory
//! ensembles: driest-month aggregation, return-period abnormality, commune
//! eligibility, exposure-to-cost conversion, and Value-at-Risk.

pub mod communes;
pub mod cost;
pub mod eligibility;
mod error;
pub mod loss;

pub use communes::{rectangular_communes, Commune, CommuneTable};
pub use cost::{CostForm, CostModel};
pub use eligibility::{
    abnormal_pixels, commune_eligibility, yearly_swi, Eligibility, YearlyReference,
};
pub use error::{Result, RiskError};
pub use loss::{loss_distribution, value_at_risk, CostDistribution, RiskConfig, YearOutcome};
