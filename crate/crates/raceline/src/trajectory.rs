//! Time-stamped discrete trajectories and their CSV form.

use nalgebra::Vector3;

use crate::quad::{QuadState, RotorRateInput};
use crate::{Error, Result};

/// CSV schema tag written into (and checked against) file headers.
pub const TRAJECTORY_SCHEMA: &str = "raceline-trajectory-v1";

/// One sampled point: state and the input held until the next node.
#[derive(Debug, Clone)]
pub struct TrajectoryNode {
    pub t: f64,
    pub state: QuadState,
    pub input: RotorRateInput,
}

/// Time-stamped sequence of states and rotor-rate inputs, with the segment
/// structure used by the shooting stage (node counts and step per track
/// segment, and the node index pinned to each gate/waypoint).
#[derive(Debug, Clone, Default)]
pub struct DiscreteTrajectory {
    pub nodes: Vec<TrajectoryNode>,
    /// Shooting stages per segment; `sum = nodes.len() - 1` when set.
    pub segment_counts: Vec<usize>,
    /// Time step per segment [s].
    pub segment_dts: Vec<f64>,
    /// Node index at which each ordered track constraint is crossed.
    pub gate_nodes: Vec<usize>,
    /// Traversal target for each ordered track constraint.
    pub gate_targets: Vec<Vector3<f64>>,
}

impl DiscreteTrajectory {
    pub fn duration(&self) -> f64 {
        match (self.nodes.first(), self.nodes.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Write the 22-column CSV form: t, position, quaternion (x,y,z,w),
    /// velocity, body rates, rotor thrusts, thrust rates.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# schema: {TRAJECTORY_SCHEMA}\n"));
        out.push_str("t,px,py,pz,qx,qy,qz,qw,vx,vy,vz,wx,wy,wz,f1,f2,f3,f4,u1,u2,u3,u4\n");
        for n in &self.nodes {
            let x = n.state.to_array();
            let u = n.input.to_array();
            let mut fields = vec![format!("{:.9}", n.t)];
            fields.extend(x.iter().map(|v| format!("{v:.9}")));
            fields.extend(u.iter().map(|v| format!("{v:.9}")));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parse the CSV form. Segment metadata is not stored in CSV and is left
    /// empty.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut nodes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("t,") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 22 {
                return Err(Error::Parse(format!(
                    "trajectory csv line {}: expected 22 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let values: std::result::Result<Vec<f64>, _> =
                fields.iter().map(|f| f.parse::<f64>()).collect();
            let values = values.map_err(|e| {
                Error::Parse(format!("trajectory csv line {}: {e}", lineno + 1))
            })?;
            let mut x = [0.0; 17];
            x.copy_from_slice(&values[1..18]);
            let mut u = [0.0; 4];
            u.copy_from_slice(&values[18..22]);
            nodes.push(TrajectoryNode {
                t: values[0],
                state: QuadState::from_array(&x),
                input: RotorRateInput::from_array(&u),
            });
        }
        if nodes.is_empty() {
            return Err(Error::Parse("trajectory csv: no data rows".into()));
        }
        for w in nodes.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::Parse("trajectory csv: timestamps not increasing".into()));
            }
        }
        Ok(Self { nodes, ..Default::default() })
    }

    pub fn read_csv(path: &std::path::Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}
