use crate::network::{OptimizerState, ParamGroup};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with one learning rate per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    state: OptimizerState,
    groups: Vec<ParamGroup>,
}

impl Adam {
    pub fn new(groups: Vec<ParamGroup>) -> Self {
        let n = groups.len();
        Self {
            state: OptimizerState {
                step: 0,
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
            groups,
        }
    }

    pub fn from_state(groups: Vec<ParamGroup>, state: OptimizerState) -> Option<Self> {
        (state.m.len() == groups.len() && state.v.len() == groups.len()).then_some(Self { state, groups })
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32], lr_for: impl Fn(ParamGroup) -> f64) {
        assert_eq!(params.len(), self.groups.len());
        assert_eq!(grad.len(), self.groups.len());
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let lr_backbone = lr_for(ParamGroup::Backbone);
        let lr_heads = lr_for(ParamGroup::Heads);
        let lr_rescale = lr_for(ParamGroup::Rescale);
        for i in 0..params.len() {
            let g = f64::from(grad[i]);
            let m = BETA1 * f64::from(self.state.m[i]) + (1.0 - BETA1) * g;
            let v = BETA2 * f64::from(self.state.v[i]) + (1.0 - BETA2) * g * g;
            self.state.m[i] = m as f32;
            self.state.v[i] = v as f32;
            let lr = match self.groups[i] {
                ParamGroup::Backbone => lr_backbone,
                ParamGroup::Heads => lr_heads,
                ParamGroup::Rescale => lr_rescale,
            };
            let update = lr * (m / c1) / ((v / c2).sqrt() + EPSILON);
            params[i] = (f64::from(params[i]) - update) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(vec![ParamGroup::Backbone, ParamGroup::Heads]);
        let mut p = [1.0f32, 1.0];
        adam.step(&mut p, &[0.5, -2.0], |g| if g == ParamGroup::Backbone { 0.01 } else { 0.1 });
        assert!((p[0] - 0.99).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
        assert_eq!(adam.state().step, 1);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut adam = Adam::new(vec![ParamGroup::Heads; 3]);
        let target = [3.0f32, -1.0, 0.5];
        let mut p = [0.0f32; 3];
        for _ in 0..3000 {
            let g: Vec<f32> = p.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            adam.step(&mut p, &g, |_| 0.01);
        }
        for (x, t) in p.iter().zip(&target) {
            assert!((x - t).abs() < 1e-2, "{x} vs {t}");
        }
    }
}
