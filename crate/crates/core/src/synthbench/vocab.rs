//! Fixed word lists of the synthetic benchmark.

/// Skill-identifying verbs. Every skill in a suite gets a distinct verb.
pub const VERBS: &[&str] = &[
    "open", "close", "stack", "push", "pick", "place", "turn", "slide", "lift", "wipe", "press",
    "pour", "hang", "sweep",
];

/// Object classes; each has a fixed color in [`class_color`].
pub const NOUNS: &[&str] = &[
    "grill", "drawer", "wine", "cup", "bowl", "plate", "kettle", "sponge", "lamp", "book", "box",
    "bottle", "pan", "knife",
];

/// Per-variation attributes; the attribute also sets the primary object's size.
pub const ATTRIBUTES: &[&str] = &["small", "medium", "large", "old", "new"];

pub const FILLERS: &[&str] = &["the", "near"];

/// Token prepended to an instruction to form the oracle prompt.
pub const PROMPT_TEMPLATE: &str = "depict";

/// Every token with its own row in the frozen embedding table.
pub const VOCABULARY: &[&str] = &[
    "open", "close", "stack", "push", "pick", "place", "turn", "slide", "lift", "wipe", "press",
    "pour", "hang", "sweep", "grill", "drawer", "wine", "cup", "bowl", "plate", "kettle", "sponge",
    "lamp", "book", "box", "bottle", "pan", "knife", "small", "medium", "large", "old", "new",
    "the", "near", "depict",
];

pub fn is_verb(token: &str) -> bool {
    VERBS.contains(&token)
}

/// Unit-norm directions spread over the positive RGB octant, at least 22
/// degrees apart, so every class is the brightest match along its own
/// direction whatever the shading.
const PALETTE: [[f64; 3]; 14] = [
    [0.766, 0.466, 0.444],
    [0.000, 1.000, 0.000],
    [0.924, 0.000, 0.381],
    [0.000, 0.927, 0.375],
    [1.000, 0.000, 0.000],
    [0.427, 0.612, 0.666],
    [0.000, 0.711, 0.703],
    [0.700, 0.000, 0.714],
    [0.925, 0.381, 0.000],
    [0.374, 0.927, 0.000],
    [0.375, 0.000, 0.927],
    [0.000, 0.000, 1.000],
    [0.697, 0.717, 0.000],
    [0.000, 0.377, 0.926],
];

pub fn class_color(class: usize) -> [f64; 3] {
    PALETTE[class % PALETTE.len()]
}
