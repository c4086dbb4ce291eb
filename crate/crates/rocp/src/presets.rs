//! Named tensor shapes for synthetic runs: the synthetic scaling family
//! and stand-ins shaped like common surveillance-video tensors (frame
//! height × width × colour × time).

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    pub dims: &'static [usize],
    pub rank: usize,
    pub batch_size: usize,
}

pub const PRESETS: &[Preset] = &[
    Preset { name: "syn-400x400x200", dims: &[400, 400, 200], rank: 5, batch_size: 1 },
    Preset { name: "syn-500x500x200", dims: &[500, 500, 200], rank: 5, batch_size: 1 },
    Preset { name: "syn-60x60x60x200", dims: &[60, 60, 60, 200], rank: 5, batch_size: 1 },
    Preset { name: "syn-100x100x100x200", dims: &[100, 100, 100, 200], rank: 5, batch_size: 1 },
    Preset { name: "syn-20x20x20x20x200", dims: &[20, 20, 20, 20, 200], rank: 5, batch_size: 1 },
    Preset { name: "syn-30x30x30x30x200", dims: &[30, 30, 30, 30, 200], rank: 5, batch_size: 1 },
    Preset { name: "cwsi", dims: &[600, 800, 3, 31], rank: 5, batch_size: 1 },
    Preset { name: "camera1", dims: &[288, 384, 3, 500], rank: 5, batch_size: 10 },
    Preset { name: "camera2", dims: &[288, 384, 3, 500], rank: 5, batch_size: 10 },
    Preset { name: "indoor", dims: &[1040, 1392, 3, 100], rank: 6, batch_size: 10 },
    Preset { name: "outdoor", dims: &[1040, 1392, 3, 100], rank: 7, batch_size: 10 },
    Preset { name: "seq1", dims: &[480, 640, 3, 221], rank: 5, batch_size: 10 },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name.eq_ignore_ascii_case(name))
}
