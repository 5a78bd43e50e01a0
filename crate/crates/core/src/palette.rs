//! Named colors used for backgrounds and object recoloring.

use image::Rgb;

use crate::error::{Error, Result};

/// The eleven plain background colors of the evaluation setting.
pub const PALETTE: [(&str, [u8; 3]); 11] = [
    ("black", [20, 20, 20]),
    ("white", [245, 245, 245]),
    ("grey", [128, 128, 128]),
    ("red", [200, 30, 30]),
    ("green", [30, 160, 40]),
    ("blue", [30, 60, 200]),
    ("yellow", [230, 210, 30]),
    ("orange", [240, 130, 20]),
    ("pink", [240, 130, 180]),
    ("purple", [120, 40, 160]),
    ("brown", [120, 75, 35]),
];

/// Hues (degrees) the reference recolor backend paints with.
///
/// Achromatic names have no hue and desaturate instead.
pub fn reference_hue(name: &str) -> Result<Option<f64>> {
    let h = match name {
        "black" | "white" | "grey" => None,
        "red" => Some(0.0),
        "orange" => Some(30.0),
        "yellow" => Some(55.0),
        "green" => Some(120.0),
        "blue" => Some(225.0),
        "purple" => Some(280.0),
        "pink" => Some(330.0),
        "brown" => Some(25.0),
        other => return Err(Error::config(format!("unknown color `{other}`"))),
    };
    Ok(h)
}

pub fn lookup(name: &str) -> Result<Rgb<u8>> {
    PALETTE
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| Rgb(*c))
        .ok_or_else(|| Error::config(format!("unknown color `{name}`")))
}

pub fn names() -> impl Iterator<Item = &'static str> {
    PALETTE.iter().map(|(n, _)| *n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_has_eleven_distinct_colors() {
        let mut names: Vec<_> = names().collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 11);
        for n in names {
            lookup(n).unwrap();
            reference_hue(n).unwrap();
        }
    }

    #[test]
    fn unknown_color_is_config_error() {
        assert!(matches!(lookup("chartreuse"), Err(Error::Config(_))));
        assert!(matches!(reference_hue("chartreuse"), Err(Error::Config(_))));
    }
}
