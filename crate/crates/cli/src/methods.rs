//! Prioritization method names and dispatch shared by the `prioritize`
//! command and the manifest pipeline.

use std::str::FromStr;

use fastprio_core::baselines::{
    build_coverage_profile, build_surprise_profile, dsa_rank, lsa_rank, mc_dropout_rank, nac_rank,
    nbc_rank, nns_rank, random_rank, McDropoutConfig, NnsConfig,
};
use fastprio_core::data::Dataset;
use fastprio_core::model::Model;
use fastprio_core::prioritize::{prioritize, RankedSuite, UncertaintyMetric};
use fastprio_core::selection::FeatureMask;
use fastprio_core::{Error, Result};

/// One prioritization method, as named on the command line and in reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Plain uncertainty over the original probabilities.
    Uncertainty(UncertaintyMetric),
    /// Masked re-inference before the uncertainty metric.
    Fast(UncertaintyMetric),
    /// Nearest-neighbor smoothing before the uncertainty metric.
    Nns(UncertaintyMetric),
    /// Averaged stochastic forwards before the uncertainty metric.
    McDropout(UncertaintyMetric),
    Nac,
    Nbc,
    Lsa,
    Dsa,
    Random,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let metric_of = |suffix: &str| -> Result<UncertaintyMetric> {
            if suffix.is_empty() {
                Ok(UncertaintyMetric::Gini)
            } else {
                suffix.trim_start_matches('-').parse()
            }
        };
        match s {
            "gini" | "maxp" | "margin" => Ok(Method::Uncertainty(s.parse()?)),
            "nac" => Ok(Method::Nac),
            "nbc" => Ok(Method::Nbc),
            "lsa" => Ok(Method::Lsa),
            "dsa" => Ok(Method::Dsa),
            "random" => Ok(Method::Random),
            other if other.starts_with("fast") => Ok(Method::Fast(metric_of(&other[4..])?)),
            other if other.starts_with("nns") => Ok(Method::Nns(metric_of(&other[3..])?)),
            other if other.starts_with("mcdropout") => {
                Ok(Method::McDropout(metric_of(&other[9..])?))
            }
            other => Err(Error::Parameter(format!(
                "unknown method '{other}' (expected gini, maxp, margin, fast[-metric], \
                 nns[-metric], mcdropout[-metric], nac, nbc, lsa, dsa, or random)"
            ))),
        }
    }
}

impl Method {
    pub fn needs_mask(&self) -> bool {
        matches!(self, Method::Fast(_))
    }

    pub fn needs_train(&self) -> bool {
        matches!(self, Method::Nbc | Method::Lsa | Method::Dsa)
    }
}

/// Everything a method might need beyond the model and suite.
pub struct MethodContext<'a> {
    pub masks: Option<&'a FeatureMask>,
    pub train: Option<&'a Dataset>,
    pub nns: NnsConfig,
    pub mc_dropout: McDropoutConfig,
    pub nac_threshold: f32,
    pub seed: u64,
    pub jobs: usize,
}

/// Runs one method over the suite.
pub fn run_method(
    method: Method,
    model: &Model,
    suite: &Dataset,
    ctx: &MethodContext<'_>,
) -> Result<RankedSuite> {
    match method {
        Method::Uncertainty(metric) => prioritize(model, None, suite, metric, ctx.jobs),
        Method::Fast(metric) => {
            let masks = ctx.masks.ok_or_else(|| {
                Error::Config("masked scoring needs --mask (build one with `fastprio mask`)".into())
            })?;
            prioritize(model, Some(masks), suite, metric, ctx.jobs)
        }
        Method::Nns(metric) => nns_rank(model, suite, &ctx.nns, metric),
        Method::McDropout(metric) => {
            mc_dropout_rank(model, suite, &ctx.mc_dropout, metric, ctx.seed, ctx.jobs)
        }
        Method::Nac => nac_rank(model, suite, ctx.nac_threshold),
        Method::Nbc => {
            let train = need_train(ctx, "nbc")?;
            let profile = build_coverage_profile(model, train)?;
            nbc_rank(model, suite, &profile)
        }
        Method::Lsa => {
            let train = need_train(ctx, "lsa")?;
            let profile = build_surprise_profile(model, train, None)?;
            lsa_rank(model, suite, &profile)
        }
        Method::Dsa => {
            let train = need_train(ctx, "dsa")?;
            let profile = build_surprise_profile(model, train, None)?;
            dsa_rank(model, suite, &profile)
        }
        Method::Random => random_rank(model, suite, ctx.seed),
    }
}

fn need_train<'a>(ctx: &MethodContext<'a>, what: &str) -> Result<&'a Dataset> {
    ctx.train
        .ok_or_else(|| Error::Config(format!("{what} needs --train (the profiling dataset)")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_parse() {
        assert_eq!(
            "gini".parse::<Method>().unwrap(),
            Method::Uncertainty(UncertaintyMetric::Gini)
        );
        assert_eq!(
            "fast".parse::<Method>().unwrap(),
            Method::Fast(UncertaintyMetric::Gini)
        );
        assert_eq!(
            "fast-margin".parse::<Method>().unwrap(),
            Method::Fast(UncertaintyMetric::Margin)
        );
        assert_eq!(
            "nns-maxp".parse::<Method>().unwrap(),
            Method::Nns(UncertaintyMetric::MaxP)
        );
        assert_eq!(
            "mcdropout".parse::<Method>().unwrap(),
            Method::McDropout(UncertaintyMetric::Gini)
        );
        assert_eq!("random".parse::<Method>().unwrap(), Method::Random);
        assert!("fastest".parse::<Method>().is_err());
        assert!("bogus".parse::<Method>().is_err());
    }
}
