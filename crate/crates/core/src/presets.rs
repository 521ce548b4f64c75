//! Named per-dataset SVM trade-off values.

/// `(name, C)` pairs. `voc2007_companion` is the VOC value reported with the
/// one-vs-all classification setup, which differs from the `voc2007` entry.
pub const C_PRESETS: &[(&str, f64)] = &[
    ("voc2007", 0.2),
    ("mit67", 2.0),
    ("birds", 2.0),
    ("flowers", 2.0),
    ("h3d", 0.2),
    ("uiucatt", 0.2),
    ("voc2007_companion", 5.0),
];

pub fn preset_c(name: &str) -> Option<f64> {
    C_PRESETS.iter().find(|(n, _)| *n == name).map(|&(_, c)| c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_presets() {
        assert_eq!(preset_c("voc2007"), Some(0.2));
        assert_eq!(preset_c("mit67"), Some(2.0));
        assert_eq!(preset_c("uiucatt"), Some(0.2));
        assert_eq!(preset_c("voc2007_companion"), Some(5.0));
        assert_eq!(preset_c("imagenet"), None);
    }
}
