//! Color palette and shape set of MiniTable.

use serde::{Deserialize, Serialize};

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $surface:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $surface),+ }
            }

            pub fn parse(s: &str) -> Option<Self> {
                match s { $($surface => Some($name::$variant),)+ _ => None }
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

named_enum!(
    /// The nineteen prompt colors plus `orange`, which appears in recorded scenes.
    Color {
        Red => "red",
        Maroon => "maroon",
        Lime => "lime",
        Green => "green",
        Blue => "blue",
        Navy => "navy",
        Yellow => "yellow",
        Cyan => "cyan",
        Magenta => "magenta",
        Silver => "silver",
        Gray => "gray",
        Olive => "olive",
        Purple => "purple",
        Teal => "teal",
        Azure => "azure",
        Violet => "violet",
        Rose => "rose",
        Black => "black",
        White => "white",
        Orange => "orange",
    }
);

named_enum!(Shape {
    Cube => "cube",
    Star => "star",
    Moon => "moon",
    Cylinder => "cylinder",
    Triangular => "triangular",
    Container => "container",
});

impl Color {
    /// Canonical RGB in [0,1]^3 used by nearest-color classification.
    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Maroon => [0.5, 0.0, 0.0],
            Color::Lime => [0.0, 1.0, 0.0],
            Color::Green => [0.0, 0.5, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Navy => [0.0, 0.0, 0.5],
            Color::Yellow => [1.0, 1.0, 0.0],
            Color::Cyan => [0.0, 1.0, 1.0],
            Color::Magenta => [1.0, 0.0, 1.0],
            Color::Silver => [0.75, 0.75, 0.75],
            Color::Gray => [0.5, 0.5, 0.5],
            Color::Olive => [0.5, 0.5, 0.0],
            Color::Purple => [0.5, 0.0, 0.5],
            Color::Teal => [0.0, 0.5, 0.5],
            Color::Azure => [0.0, 0.5, 1.0],
            Color::Violet => [0.5, 0.0, 1.0],
            Color::Rose => [1.0, 0.0, 0.5],
            Color::Black => [0.0, 0.0, 0.0],
            Color::White => [1.0, 1.0, 1.0],
            Color::Orange => [1.0, 0.5, 0.0],
        }
    }

    /// Nearest palette color in Euclidean RGB distance; ties go to palette order.
    pub fn classify(rgb: [f64; 3]) -> Color {
        let mut best = Color::ALL[0];
        let mut best_d = f64::INFINITY;
        for &c in Color::ALL {
            let k = c.rgb();
            let d = (0..3).map(|i| (rgb[i] - k[i]).powi(2)).sum::<f64>();
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }
}

impl Shape {
    pub fn is_container(self) -> bool {
        self == Shape::Container
    }

    /// Graspable shapes (everything but containers).
    pub const GRASPABLE: &'static [Shape] =
        &[Shape::Cube, Shape::Star, Shape::Moon, Shape::Cylinder, Shape::Triangular];
}
