use serde::{Deserialize, Serialize};

use crate::geometry::{HBox, OrientedBox};

/// Which kind of label an annotated scene carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeakForm {
    RBox,
    HBox,
    Point,
}

impl WeakForm {
    pub const ALL: [WeakForm; 3] = [WeakForm::RBox, WeakForm::HBox, WeakForm::Point];

    pub fn name(&self) -> &'static str {
        match self {
            WeakForm::RBox => "rbox",
            WeakForm::HBox => "hbox",
            WeakForm::Point => "point",
        }
    }
}

impl std::str::FromStr for WeakForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rbox" => Ok(WeakForm::RBox),
            "hbox" => Ok(WeakForm::HBox),
            "point" => Ok(WeakForm::Point),
            other => Err(format!("unknown annotation form `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum Shape {
    RBox(OrientedBox),
    HBox(HBox),
    Point { x: f64, y: f64 },
}

/// One object label in one of the three weak forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakAnnotation {
    pub class: usize,
    pub shape: Shape,
}

impl WeakAnnotation {
    pub fn rbox(class: usize, b: OrientedBox) -> Self {
        Self {
            class,
            shape: Shape::RBox(b),
        }
    }

    pub fn hbox(class: usize, b: HBox) -> Self {
        Self {
            class,
            shape: Shape::HBox(b),
        }
    }

    pub fn point(class: usize, p: [f64; 2]) -> Self {
        Self {
            class,
            shape: Shape::Point { x: p[0], y: p[1] },
        }
    }

    pub fn form(&self) -> WeakForm {
        match self.shape {
            Shape::RBox(_) => WeakForm::RBox,
            Shape::HBox(_) => WeakForm::HBox,
            Shape::Point { .. } => WeakForm::Point,
        }
    }

    /// Center of the labeled region.
    pub fn anchor(&self) -> [f64; 2] {
        match self.shape {
            Shape::RBox(b) => b.center(),
            Shape::HBox(b) => b.center(),
            Shape::Point { x, y } => [x, y],
        }
    }
}
