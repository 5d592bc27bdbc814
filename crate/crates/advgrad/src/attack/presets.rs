//! Named attack configurations.
//!
//! The preset vocabulary matches the usual reporting convention:
//! `FGSM`, `FGSM-10`, `FGM`, `BIM-10`, `BIM-50`, `BIM-100`, `PGD-50-10`.
//! Single-step presets pin their norm; the iterative ones take it from the
//! evaluation configuration.

use ndarray::Array4;

use super::{
    bim, fgm, fgsm, pgd_with_init, with_restarts, AttackKind, AttackResult, AttackSpace,
    AttackTarget, Norm, PgdInit, ThreatModel,
};
use crate::element::Element;
use crate::error::{Error, Result};

/// A named attack configuration: base attack, iteration count, restart count
/// and (for the single-step attacks) the norm it is defined for.
#[derive(Debug, Clone, Copy)]
pub struct AttackPreset {
    pub name: &'static str,
    pub kind: AttackKind,
    pub iterations: usize,
    pub restarts: usize,
    pub forced_norm: Option<Norm>,
}

const PRESETS: &[AttackPreset] = &[
    AttackPreset { name: "FGSM", kind: AttackKind::FastGradient, iterations: 1, restarts: 0, forced_norm: Some(Norm::Linf) },
    AttackPreset { name: "FGSM-10", kind: AttackKind::FastGradient, iterations: 1, restarts: 10, forced_norm: Some(Norm::Linf) },
    AttackPreset { name: "FGM", kind: AttackKind::FastGradient, iterations: 1, restarts: 0, forced_norm: Some(Norm::L2) },
    AttackPreset { name: "BIM-10", kind: AttackKind::Bim, iterations: 10, restarts: 0, forced_norm: None },
    AttackPreset { name: "BIM-50", kind: AttackKind::Bim, iterations: 50, restarts: 0, forced_norm: None },
    AttackPreset { name: "BIM-100", kind: AttackKind::Bim, iterations: 100, restarts: 0, forced_norm: None },
    AttackPreset { name: "PGD-50-10", kind: AttackKind::Pgd, iterations: 50, restarts: 10, forced_norm: None },
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

pub fn lookup_preset(name: &str) -> Result<AttackPreset> {
    PRESETS
        .iter()
        .find(|p| p.name.eq_ignore_ascii_case(name))
        .copied()
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

/// Conventional budget per norm: 8/255 under L∞, 0.5 under L2.
pub fn default_epsilon(norm: Norm) -> f64 {
    match norm {
        Norm::Linf => 8.0 / 255.0,
        Norm::L2 => 0.5,
    }
}

impl AttackPreset {
    /// Build the threat model for this preset. `alpha` defaults to ε for the
    /// single-step attacks and ε/4 for the iterative ones.
    pub fn threat_model(
        &self,
        norm: Norm,
        epsilon: f64,
        alpha: Option<f64>,
        space: AttackSpace,
    ) -> Result<ThreatModel> {
        if let Some(forced) = self.forced_norm {
            if forced != norm {
                return Err(Error::config(
                    "threat.norm",
                    format!("preset {} is defined for the {} norm", self.name, forced.name()),
                ));
            }
        }
        let alpha = alpha.unwrap_or(match self.kind {
            AttackKind::FastGradient => epsilon,
            _ => epsilon / 4.0,
        });
        let tm = ThreatModel {
            norm,
            epsilon,
            alpha,
            iterations: self.iterations,
            restarts: self.restarts,
            space,
        };
        tm.validate()?;
        Ok(tm)
    }

    /// Run the preset on a batch. `sample_ids` feed per-sample seed
    /// derivation; defaults to batch positions.
    pub fn run<E: Element>(
        &self,
        target: &AttackTarget<'_, E>,
        x: &Array4<E>,
        y: &[usize],
        tm: &ThreatModel,
        seed: u64,
        sample_ids: Option<&[u64]>,
    ) -> Result<AttackResult<E>> {
        if self.restarts > 0 {
            return with_restarts(self.kind, self.restarts, target, x, y, tm, seed, sample_ids);
        }
        match self.kind {
            AttackKind::FastGradient => match tm.norm {
                Norm::Linf => fgsm(target, x, y, tm),
                Norm::L2 => fgm(target, x, y, tm),
            },
            AttackKind::Bim => bim(target, x, y, tm),
            AttackKind::Pgd => {
                pgd_with_init(target, x, y, tm, PgdInit::Random { seed, restart: 0 }, sample_ids)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_has_the_seven_presets() {
        assert_eq!(
            preset_names(),
            vec!["FGSM", "FGSM-10", "FGM", "BIM-10", "BIM-50", "BIM-100", "PGD-50-10"]
        );
        assert!(lookup_preset("bim-50").is_ok());
        assert!(matches!(lookup_preset("MI-FGSM"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn single_step_presets_pin_their_norm() {
        let p = lookup_preset("FGSM").unwrap();
        assert!(p.threat_model(Norm::L2, 0.5, None, AttackSpace::InputSpace).is_err());
        let p = lookup_preset("FGM").unwrap();
        assert!(p.threat_model(Norm::Linf, 8.0 / 255.0, None, AttackSpace::InputSpace).is_err());
    }

    #[test]
    fn default_alpha_is_quarter_epsilon_for_iterative() {
        let p = lookup_preset("BIM-50").unwrap();
        let tm = p.threat_model(Norm::Linf, 8.0 / 255.0, None, AttackSpace::InputSpace).unwrap();
        assert_eq!(tm.alpha, 8.0 / 255.0 / 4.0);
        assert_eq!(tm.iterations, 50);
        let p = lookup_preset("FGSM").unwrap();
        let tm = p.threat_model(Norm::Linf, 8.0 / 255.0, None, AttackSpace::InputSpace).unwrap();
        assert_eq!(tm.alpha, tm.epsilon);
    }
}
