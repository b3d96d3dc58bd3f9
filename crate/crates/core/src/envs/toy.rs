use serde::{Deserialize, Serialize};

use super::{Env, EnvStep};

/// The shortest-path task: travel from `S_0 = (x_0, 0)` to `S_T = (0, 0)`
/// over a uniform x-grid. The state is the position `(x, y)`; the action is a
/// heading angle, so one transition moves from column `i` to column `i + 1`
/// with `y' = y + spacing·tan(θ)`.
///
/// Time is measured in discount ticks of one grid spacing of arc length: a
/// transition of length `L` lasts `L / spacing` ticks, so longer paths are
/// discounted more and the straight line is the unique optimum. At the last
/// column an agent that missed the target walks vertically towards it, one
/// tick per spacing, with a final fractional tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPathEnv {
    pub grid: Vec<f64>,
    pub spacing: f64,
    pub gamma: f64,
    pub y_bound: f64,
    pub heading_bound: f64,
    pub tolerance: f64,
    pub max_steps: usize,
}

pub const TOY_X_START: f64 = -1.3;
pub const TOY_X_END: f64 = 0.0;
pub const TOY_POINTS: usize = 50;

impl Default for ToyPathEnv {
    fn default() -> Self {
        let spacing = (TOY_X_END - TOY_X_START) / (TOY_POINTS - 1) as f64;
        Self {
            grid: toy_grid(),
            spacing,
            gamma: 0.99,
            y_bound: 1.5,
            heading_bound: 1.5,
            tolerance: 0.5 * spacing,
            max_steps: 400,
        }
    }
}

/// 50 uniform points from -1.3 to 0, endpoints exact.
pub fn toy_grid() -> Vec<f64> {
    let n = TOY_POINTS;
    (0..n)
        .map(|i| {
            if i == n - 1 {
                TOY_X_END
            } else {
                TOY_X_START + (TOY_X_END - TOY_X_START) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

impl ToyPathEnv {
    pub fn start(&self) -> [f64; 2] {
        [self.grid[0], 0.0]
    }

    pub fn last_column(&self) -> usize {
        self.grid.len() - 1
    }

    /// Grid column nearest to `x`.
    pub fn column(&self, x: f64) -> usize {
        let i = ((x - self.grid[0]) / self.spacing).round();
        (i.max(0.0) as usize).min(self.last_column())
    }

    pub fn step_pos(&self, pos: [f64; 2], heading: f64) -> (EnvStep, [f64; 2]) {
        let [x, y] = pos;
        let i = self.column(x);
        let clamped = !(heading.abs() <= self.heading_bound);
        let th = if heading.is_nan() {
            0.0
        } else {
            heading.clamp(-self.heading_bound, self.heading_bound)
        };
        let last = self.last_column();
        if i >= last {
            let d = y.abs();
            let (ny, step) = if d <= self.spacing {
                (0.0, d)
            } else {
                (y - self.spacing.copysign(y), self.spacing)
            };
            let done = ny.abs() < self.tolerance;
            let next = [self.grid[last], ny];
            return (
                EnvStep {
                    next: next.to_vec(),
                    reward: if done { 1.0 } else { 0.0 },
                    done,
                    duration: step / self.spacing,
                    clamped,
                },
                next,
            );
        }
        let ny = (y + self.spacing * th.tan()).clamp(-self.y_bound, self.y_bound);
        let nx = self.grid[i + 1];
        let length = (nx - x).hypot(ny - y);
        let done = i + 1 == last && ny.abs() < self.tolerance;
        let next = [nx, ny];
        (
            EnvStep {
                next: next.to_vec(),
                reward: if done { 1.0 } else { 0.0 },
                done,
                duration: length / self.spacing,
                clamped,
            },
            next,
        )
    }

    /// Heading that moves from `pos` to height `y_next` at the next column.
    pub fn heading_to(&self, pos: [f64; 2], y_next: f64) -> f64 {
        let i = self.column(pos[0]);
        if i >= self.last_column() {
            return 0.0;
        }
        (y_next - pos[1]).atan2(self.grid[i + 1] - pos[0])
    }

    /// `y` at each grid column (first visit), from a trajectory of states.
    /// Columns never reached repeat the last observed height.
    pub fn y_at_columns(&self, states: &[Vec<f64>]) -> Vec<f64> {
        let mut ys: Vec<Option<f64>> = vec![None; self.grid.len()];
        for s in states {
            let c = self.column(s[0]);
            if ys[c].is_none() {
                ys[c] = Some(s[1]);
            }
        }
        let mut last = 0.0;
        ys.into_iter()
            .map(|v| {
                if let Some(y) = v {
                    last = y;
                }
                last
            })
            .collect()
    }
}

impl Env for ToyPathEnv {
    fn reset(&self) -> Vec<f64> {
        self.start().to_vec()
    }

    fn step(&self, state: &[f64], action: &[f64]) -> EnvStep {
        self.step_pos([state[0], state[1]], action[0]).0
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }
}
