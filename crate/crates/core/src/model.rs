//! Domain types shared by every other module: the replica-count
//! distribution, the system configuration and its validation.
//!
//! A configuration can be written as a flat `key = value` document:
//!
//! ```text
//! # comments and blank lines are ignored
//! protocol = irsa
//! n = 4000
//! m = 100
//! pa = 1e-4
//! lambda = 3:1.0
//! ```
//!
//! `lambda` is a list of `degree:probability` pairs separated by `,` (or
//! `;`, which is the form written into CSV cells). For `protocol = sa`
//! the keys `m` and `lambda` may be omitted and default to `1` and `1:1`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

/// Absolute tolerance on the normalisation of a degree distribution.
pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("degree must be a positive integer, got {0}")]
    ZeroDegree(u32),
    #[error("probability for degree {degree} is {prob}, expected a value in [0, 1]")]
    BadProbability { degree: u32, prob: f64 },
    #[error("degree probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("degree {0} listed more than once")]
    DuplicateDegree(u32),
    #[error("degree distribution is empty")]
    Empty,
    #[error("cannot parse `{0}`: {1}")]
    Parse(String, String),
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Probability mass function of the number of replicas a transmitting user
/// sends, stored sparsely as `(degree, probability)` pairs sorted by degree.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeDistribution {
    coeffs: Vec<(u32, f64)>,
}

impl DegreeDistribution {
    pub fn new<I>(pairs: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (u32, f64)>,
    {
        let mut coeffs: Vec<(u32, f64)> = Vec::new();
        for (degree, prob) in pairs {
            if degree == 0 {
                return Err(ModelError::ZeroDegree(degree));
            }
            if !(0.0..=1.0).contains(&prob) {
                return Err(ModelError::BadProbability { degree, prob });
            }
            if coeffs.iter().any(|&(d, _)| d == degree) {
                return Err(ModelError::DuplicateDegree(degree));
            }
            coeffs.push((degree, prob));
        }
        coeffs.retain(|&(_, p)| p > 0.0);
        if coeffs.is_empty() {
            return Err(ModelError::Empty);
        }
        coeffs.sort_by_key(|&(d, _)| d);
        let total: f64 = coeffs.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(ModelError::NotNormalized(total));
        }
        Ok(Self { coeffs })
    }

    /// Point mass at `degree`, i.e. `Λ(x) = x^degree`.
    pub fn regular(degree: u32) -> Result<Self, ModelError> {
        Self::new([(degree, 1.0)])
    }

    pub fn coeffs(&self) -> &[(u32, f64)] {
        &self.coeffs
    }

    pub fn prob(&self, degree: u32) -> f64 {
        self.coeffs
            .iter()
            .find(|&&(d, _)| d == degree)
            .map_or(0.0, |&(_, p)| p)
    }

    /// Largest degree with nonzero probability.
    pub fn max_degree(&self) -> u32 {
        self.coeffs.last().map_or(0, |&(d, _)| d)
    }

    pub fn min_degree(&self) -> u32 {
        self.coeffs.first().map_or(0, |&(d, _)| d)
    }

    pub fn is_point_mass(&self) -> bool {
        self.coeffs.len() == 1
    }

    /// Draws a degree. A point mass consumes no randomness.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if let [(d, _)] = self.coeffs.as_slice() {
            return *d;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(d, p) in &self.coeffs {
            acc += p;
            if u < acc {
                return d;
            }
        }
        self.max_degree()
    }

    /// Renders with `;` separators so the value fits in one CSV cell.
    pub fn to_csv_field(&self) -> String {
        self.join(";")
    }

    fn join(&self, sep: &str) -> String {
        self.coeffs
            .iter()
            .map(|(d, p)| format!("{d}:{p}"))
            .collect::<Vec<_>>()
            .join(sep)
    }
}

impl fmt::Display for DegreeDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.join(","))
    }
}

impl FromStr for DegreeDistribution {
    type Err = ModelError;

    /// Parses `deg:prob[,deg:prob...]`; `;` is accepted as a separator too.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| ModelError::Parse(s.to_string(), why.to_string());
        let mut pairs = Vec::new();
        for item in s.split([',', ';']) {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            let (d, p) = item
                .split_once(':')
                .ok_or_else(|| bad("expected `degree:probability`"))?;
            let d: u32 = d.trim().parse().map_err(|_| bad("degree is not an integer"))?;
            let p: f64 = p.trim().parse().map_err(|_| bad("probability is not a number"))?;
            pairs.push((d, p));
        }
        Self::new(pairs)
    }
}

/// Σ ℓ·Λ_ℓ, the average number of replicas per transmitting user.
pub fn mean_degree(lambda: &DegreeDistribution) -> f64 {
    lambda.coeffs.iter().map(|&(d, p)| f64::from(d) * p).sum()
}

/// Edge-perspective coefficients `λ_d = d·Λ_d / Λ'(1)`, returned as
/// `(exponent, coefficient)` pairs of `λ(x) = Σ λ_d x^(d-1)`.
pub fn edge_perspective(lambda: &DegreeDistribution) -> Vec<(u32, f64)> {
    let mean = mean_degree(lambda);
    lambda
        .coeffs
        .iter()
        .map(|&(d, p)| (d - 1, f64::from(d) * p / mean))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    SlottedAloha,
    Irsa,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::SlottedAloha => "sa",
            Protocol::Irsa => "irsa",
        })
    }
}

impl FromStr for Protocol {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sa" => Ok(Protocol::SlottedAloha),
            "irsa" => Ok(Protocol::Irsa),
            other => Err(ModelError::Parse(
                other.to_string(),
                "protocol must be `sa` or `irsa`".to_string(),
            )),
        }
    }
}

/// Population `n`, frame length `m`, per-slot activation probability `pa`,
/// replica distribution and access protocol.
///
/// Fields are public; use [`validate_config`] (or [`SystemConfig::validated`])
/// before handing a hand-built value to the simulators.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub n: u32,
    pub m: u32,
    pub pa: f64,
    pub lambda: DegreeDistribution,
    pub protocol: Protocol,
}

impl SystemConfig {
    pub fn irsa(n: u32, m: u32, pa: f64, lambda: DegreeDistribution) -> Self {
        Self {
            n,
            m,
            pa,
            lambda,
            protocol: Protocol::Irsa,
        }
    }

    /// Slotted ALOHA is the degenerate `m = 1`, `Λ(x) = x` configuration.
    pub fn sa(n: u32, pa: f64) -> Self {
        Self {
            n,
            m: 1,
            pa,
            lambda: DegreeDistribution::regular(1).expect("x is a valid distribution"),
            protocol: Protocol::SlottedAloha,
        }
    }

    pub fn validated(self) -> Result<Self, ModelError> {
        let report = validate_config(&self);
        if report.ok {
            Ok(self)
        } else {
            Err(ModelError::Invalid(report.violations))
        }
    }

    /// Parses the flat `key = value` document described in the module docs.
    /// The result is not validated.
    pub fn from_kv_str(text: &str) -> Result<Self, ModelError> {
        let mut n = None;
        let mut m = None;
        let mut pa = None;
        let mut lambda = None;
        let mut protocol = None;
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ModelError::Parse(raw.to_string(), "expected `key = value`".to_string())
            })?;
            let value = value.trim();
            let num_err = |what: &str| ModelError::Parse(value.to_string(), format!("{what} is not a number"));
            match key.trim() {
                "n" => n = Some(value.parse::<u32>().map_err(|_| num_err("n"))?),
                "m" => m = Some(value.parse::<u32>().map_err(|_| num_err("m"))?),
                "pa" => pa = Some(value.parse::<f64>().map_err(|_| num_err("pa"))?),
                "lambda" => lambda = Some(value.parse::<DegreeDistribution>()?),
                "protocol" => protocol = Some(value.parse::<Protocol>()?),
                other => {
                    return Err(ModelError::Parse(
                        other.to_string(),
                        "unknown key (expected n, m, pa, protocol, lambda)".to_string(),
                    ))
                }
            }
        }
        let missing = |k: &str| ModelError::Parse(k.to_string(), "missing key".to_string());
        let protocol = protocol.ok_or_else(|| missing("protocol"))?;
        let n = n.ok_or_else(|| missing("n"))?;
        let pa = pa.ok_or_else(|| missing("pa"))?;
        Ok(match protocol {
            Protocol::SlottedAloha => {
                let mut cfg = SystemConfig::sa(n, pa);
                if let Some(m) = m {
                    cfg.m = m;
                }
                if let Some(lambda) = lambda {
                    cfg.lambda = lambda;
                }
                cfg
            }
            Protocol::Irsa => SystemConfig::irsa(
                n,
                m.ok_or_else(|| missing("m"))?,
                pa,
                lambda.ok_or_else(|| missing("lambda"))?,
            ),
        })
    }

    /// Inverse of [`SystemConfig::from_kv_str`].
    pub fn to_kv_string(&self) -> String {
        format!(
            "protocol = {}\nn = {}\nm = {}\npa = {}\nlambda = {}\n",
            self.protocol, self.n, self.m, self.pa, self.lambda
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<String>,
}

/// Checks every configuration constraint and reports all violations at once.
pub fn validate_config(cfg: &SystemConfig) -> ValidationReport {
    let mut violations = Vec::new();
    if cfg.n == 0 {
        violations.push("n must be at least 1".to_string());
    }
    if cfg.m == 0 {
        violations.push("m must be at least 1".to_string());
    }
    if !(cfg.pa > 0.0 && cfg.pa <= 1.0) {
        violations.push(format!("pa = {} is outside (0, 1]", cfg.pa));
    }
    let total: f64 = cfg.lambda.coeffs.iter().map(|&(_, p)| p).sum();
    if cfg.lambda.coeffs.is_empty()
        || (total - 1.0).abs() > NORMALIZATION_TOL
        || cfg.lambda.coeffs.iter().any(|&(d, p)| d == 0 || p < 0.0)
    {
        violations.push("lambda is not a valid degree distribution".to_string());
    }
    let max_degree = cfg.lambda.max_degree();
    match cfg.protocol {
        Protocol::Irsa => {
            if max_degree > cfg.m {
                violations.push(format!(
                    "L > m: maximum degree {max_degree} does not fit in {} distinct slots",
                    cfg.m
                ));
            }
        }
        Protocol::SlottedAloha => {
            if cfg.m != 1 {
                violations.push(format!("slotted ALOHA requires m = 1, got {}", cfg.m));
            }
            if !(cfg.lambda.is_point_mass() && max_degree == 1) {
                violations.push("slotted ALOHA requires lambda = 1:1".to_string());
            }
        }
    }
    ValidationReport {
        ok: violations.is_empty(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn x3() -> DegreeDistribution {
        DegreeDistribution::regular(3).unwrap()
    }

    #[test]
    fn validate_reference_configs() {
        assert!(validate_config(&SystemConfig::irsa(4000, 100, 1e-4, x3())).ok);
        assert!(validate_config(&SystemConfig::sa(1, 1.0)).ok);

        let report = validate_config(&SystemConfig::irsa(10, 2, 0.1, x3()));
        assert!(!report.ok);
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].contains("L > m"));
    }

    #[test]
    fn validate_rejects_zero_activation() {
        let report = validate_config(&SystemConfig::irsa(10, 10, 0.0, x3()));
        assert!(!report.ok);
        assert!(report.violations[0].contains("pa"));
        assert!(!validate_config(&SystemConfig::sa(10, f64::NAN)).ok);
    }

    #[test]
    fn validate_sa_shape() {
        let mut cfg = SystemConfig::sa(10, 0.1);
        cfg.m = 4;
        cfg.lambda = x3();
        let report = validate_config(&cfg);
        assert_eq!(report.violations.len(), 2, "{:?}", report.violations);
    }

    #[test]
    fn mean_degree_examples() {
        assert_eq!(mean_degree(&x3()), 3.0);
        assert_eq!(mean_degree(&DegreeDistribution::regular(1).unwrap()), 1.0);
        let mixed: DegreeDistribution = "2:0.5,4:0.5".parse().unwrap();
        assert_eq!(mean_degree(&mixed), 3.0);
    }

    #[test]
    fn edge_perspective_examples() {
        assert_eq!(edge_perspective(&x3()), vec![(2, 1.0)]);
        assert_eq!(
            edge_perspective(&DegreeDistribution::regular(1).unwrap()),
            vec![(0, 1.0)]
        );
        let mixed: DegreeDistribution = "1:0.5,3:0.5".parse().unwrap();
        assert_eq!(edge_perspective(&mixed), vec![(0, 0.25), (2, 0.75)]);
    }

    #[test]
    fn distribution_rejects_bad_input() {
        assert!(matches!(
            DegreeDistribution::new([(2, 0.5)]),
            Err(ModelError::NotNormalized(_))
        ));
        assert!(matches!(
            DegreeDistribution::new([(0, 1.0)]),
            Err(ModelError::ZeroDegree(0))
        ));
        assert!(matches!(
            DegreeDistribution::new([(2, 0.5), (2, 0.5)]),
            Err(ModelError::DuplicateDegree(2))
        ));
        assert!("3".parse::<DegreeDistribution>().is_err());
        assert!("a:1".parse::<DegreeDistribution>().is_err());
    }

    #[test]
    fn distribution_text_forms() {
        let d: DegreeDistribution = "4:0.5; 2:0.5".parse().unwrap();
        assert_eq!(d.to_string(), "2:0.5,4:0.5");
        assert_eq!(d.to_csv_field(), "2:0.5;4:0.5");
        assert_eq!(d.max_degree(), 4);
        assert_eq!(d.prob(3), 0.0);
    }

    #[test]
    fn sampling_matches_probabilities() {
        use rand::SeedableRng;
        let d: DegreeDistribution = "2:0.25,5:0.75".parse().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let trials = 100_000;
        let fives = (0..trials).filter(|_| d.sample(&mut rng) == 5).count();
        let freq = fives as f64 / trials as f64;
        // 3 sigma of a Bernoulli(0.75) mean
        assert!((freq - 0.75).abs() < 3.0 * (0.75f64 * 0.25 / trials as f64).sqrt() + 1e-3);
    }

    #[test]
    fn config_file_round_trip() {
        let text = "# reference point\nprotocol = irsa\nn = 4000\nm = 100\npa = 1e-4\nlambda = 3:1.0\n";
        let cfg = SystemConfig::from_kv_str(text).unwrap();
        assert_eq!(cfg, SystemConfig::irsa(4000, 100, 1e-4, x3()));
        assert_eq!(SystemConfig::from_kv_str(&cfg.to_kv_string()).unwrap(), cfg);

        let sa = SystemConfig::from_kv_str("protocol = sa\nn = 5\npa = 0.2").unwrap();
        assert_eq!(sa, SystemConfig::sa(5, 0.2));
        assert!(SystemConfig::from_kv_str("protocol = irsa\nn = 5\npa = 0.2").is_err());
        assert!(SystemConfig::from_kv_str("colour = blue").is_err());
    }

    fn arb_distribution() -> impl Strategy<Value = DegreeDistribution> {
        prop::collection::btree_map(1u32..20, 0.01f64..1.0, 1..6).prop_map(|weights| {
            let total: f64 = weights.values().sum();
            let mut pairs: Vec<(u32, f64)> =
                weights.into_iter().map(|(d, w)| (d, w / total)).collect();
            // push the rounding residue into the first entry
            let residue = 1.0 - pairs.iter().map(|&(_, p)| p).sum::<f64>();
            pairs[0].1 += residue;
            DegreeDistribution::new(pairs).unwrap()
        })
    }

    proptest! {
        #[test]
        fn edge_perspective_is_a_pmf(d in arb_distribution()) {
            let lambda = edge_perspective(&d);
            prop_assert!(lambda.iter().all(|&(_, c)| c >= 0.0));
            let total: f64 = lambda.iter().map(|&(_, c)| c).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn mean_degree_at_least_one(d in arb_distribution()) {
            prop_assert!(mean_degree(&d) >= 1.0);
        }

        #[test]
        fn validation_is_idempotent(n in 0u32..50, m in 0u32..10, pa in -0.5f64..1.5, d in arb_distribution()) {
            let cfg = SystemConfig::irsa(n, m, pa, d);
            let before = cfg.clone();
            let first = validate_config(&cfg);
            prop_assert_eq!(&first, &validate_config(&cfg));
            prop_assert_eq!(first.ok, first.violations.is_empty());
            prop_assert_eq!(cfg, before);
        }
    }
}
