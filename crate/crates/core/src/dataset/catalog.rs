//! The synthetic object vocabulary: eight tool-like object types built from
//! four planar shapes, each split into two named parts, plus the colours and
//! functional phrases used to describe them without naming them.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Bar,
    T,
    L,
    DiskWithHandle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Orange,
    Purple,
    Cyan,
    Pink,
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Orange,
        Color::Purple,
        Color::Cyan,
        Color::Pink,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Orange => "orange",
            Color::Purple => "purple",
            Color::Cyan => "cyan",
            Color::Pink => "pink",
        }
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [0.86, 0.16, 0.16],
            Color::Green => [0.16, 0.70, 0.24],
            Color::Blue => [0.20, 0.31, 0.86],
            Color::Yellow => [0.90, 0.82, 0.16],
            Color::Orange => [0.94, 0.55, 0.12],
            Color::Purple => [0.55, 0.24, 0.75],
            Color::Cyan => [0.16, 0.78, 0.82],
            Color::Pink => [0.94, 0.47, 0.71],
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Planar primitive in the object's local frame (canvas units of a 64 px image).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// Straight bar from `a` to `b` with the given thickness.
    Bar {
        part: usize,
        a: [f64; 2],
        b: [f64; 2],
        thickness: f64,
    },
    Disk {
        part: usize,
        center: [f64; 2],
        radius: f64,
    },
}

impl Primitive {
    pub fn part(&self) -> usize {
        match *self {
            Primitive::Bar { part, .. } | Primitive::Disk { part, .. } => part,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PartSpec {
    pub name: &'static str,
    /// Rendered at reduced brightness.
    pub dark: bool,
    /// Height above the table, millimetres.
    pub height_mm: f64,
    /// Descriptions of the part that avoid its name.
    pub phrases: &'static [&'static str],
    pub description: &'static str,
}

#[derive(Debug, Clone, Copy)]
pub struct ObjectSpec {
    pub name: &'static str,
    pub shape: ShapeKind,
    pub parts: [PartSpec; 2],
    pub primitives: &'static [Primitive],
    /// Verb phrases for what the object is used to do.
    pub functions: &'static [&'static str],
    pub description: &'static str,
}

const fn bar(part: usize, a: [f64; 2], b: [f64; 2], thickness: f64) -> Primitive {
    Primitive::Bar {
        part,
        a,
        b,
        thickness,
    }
}

const fn disk(part: usize, center: [f64; 2], radius: f64) -> Primitive {
    Primitive::Disk {
        part,
        center,
        radius,
    }
}

const fn part(
    name: &'static str,
    dark: bool,
    height_mm: f64,
    phrases: &'static [&'static str],
    description: &'static str,
) -> PartSpec {
    PartSpec {
        name,
        dark,
        height_mm,
        phrases,
        description,
    }
}

const HOLD: &[&str] = &["the part you hold", "the part made for your hand"];

pub const CATALOG: [ObjectSpec; 8] = [
    ObjectSpec {
        name: "knife",
        shape: ShapeKind::Bar,
        parts: [
            part("handle", true, 18.0, HOLD, "The grip of the knife, held in the hand while cutting."),
            part("blade", false, 8.0, &["the sharp part", "the part that does the cutting"],
                "The thin sharp edge used for cutting food."),
        ],
        primitives: &[bar(0, [-12.0, 0.0], [-1.0, 0.0], 5.0), bar(1, [-1.0, 0.0], [14.0, 0.0], 4.0)],
        functions: &["slice some bread", "cut the vegetables", "chop an onion"],
        description: "A kitchen tool with a sharp blade, typically used for cutting food.",
    },
    ObjectSpec {
        name: "screwdriver",
        shape: ShapeKind::Bar,
        parts: [
            part("handle", false, 22.0, HOLD, "The thick grip of the screwdriver that is twisted by hand."),
            part("shaft", true, 8.0, &["the thin metal part", "the part that goes into the screw"],
                "The narrow metal rod whose tip engages the screw."),
        ],
        primitives: &[bar(0, [-12.0, 0.0], [-2.0, 0.0], 6.0), bar(1, [-2.0, 0.0], [13.0, 0.0], 3.0)],
        functions: &["tighten a loose screw", "fix the cabinet hinge", "open the battery cover"],
        description: "A hand tool with a narrow metal shaft, typically used for turning screws.",
    },
    ObjectSpec {
        name: "hammer",
        shape: ShapeKind::T,
        parts: [
            part("handle", false, 20.0, HOLD, "The long grip of the hammer, swung by hand."),
            part("head", true, 30.0, &["the heavy striking part", "the part that hits the nail"],
                "The heavy metal block at the end that strikes nails."),
        ],
        primitives: &[bar(0, [-13.0, 0.0], [6.0, 0.0], 4.0), bar(1, [9.0, -8.0], [9.0, 8.0], 6.0)],
        functions: &["drive a nail into the wall", "hang a picture frame", "knock a peg into the ground"],
        description: "A tool with a heavy head on a handle, typically used for driving nails.",
    },
    ObjectSpec {
        name: "mop",
        shape: ShapeKind::T,
        parts: [
            part("handle", true, 20.0, HOLD, "The long pole of the mop that is held while cleaning."),
            part("head", false, 25.0, &["the part that touches the floor", "the wide soaking part"],
                "The wide absorbent end that is pushed across the floor."),
        ],
        primitives: &[bar(0, [-14.0, 0.0], [6.0, 0.0], 3.0), bar(1, [8.5, -9.0], [8.5, 9.0], 5.0)],
        functions: &["clean the wet floor", "wipe up the spilled juice", "wash the kitchen tiles"],
        description: "A cleaning tool with an absorbent head on a long pole, typically used for washing floors.",
    },
    ObjectSpec {
        name: "hockey stick",
        shape: ShapeKind::L,
        parts: [
            part("shaft", false, 20.0, HOLD, "The long straight section of the stick gripped by the player."),
            part("blade", true, 15.0, &["the part that hits the puck", "the flat bent end"],
                "The flat angled end that strikes the puck."),
        ],
        primitives: &[bar(0, [-14.0, 0.0], [8.0, 0.0], 4.0), bar(1, [10.5, -2.0], [10.5, 9.0], 5.0)],
        functions: &["play a game on the ice", "shoot the puck into the goal", "practice my slap shot"],
        description: "A long stick with a flat bent blade, typically used for playing ice games.",
    },
    ObjectSpec {
        name: "crowbar",
        shape: ShapeKind::L,
        parts: [
            part("handle", true, 18.0, HOLD, "The long straight bar of the crowbar that is pushed on."),
            part("hook", false, 18.0, &["the bent end", "the part that goes under the lid"],
                "The short bent end that is wedged under things to pry them."),
        ],
        primitives: &[bar(0, [-14.0, 0.0], [9.0, 0.0], 4.0), bar(1, [11.0, 2.0], [11.0, -8.0], 4.0)],
        functions: &["pry open this wooden crate", "lift the heavy lid", "pull out an old nail"],
        description: "A heavy metal bar with a bent end, typically used for prying things open.",
    },
    ObjectSpec {
        name: "frying pan",
        shape: ShapeKind::DiskWithHandle,
        parts: [
            part("handle", true, 25.0, HOLD, "The long grip of the pan that stays cool while cooking."),
            part("body", false, 35.0, &["the part that holds the food", "the round cooking part"],
                "The round flat surface where food is cooked."),
        ],
        primitives: &[bar(0, [-17.0, 0.0], [-7.0, 0.0], 4.0), disk(1, [0.0, 0.0], 7.5)],
        functions: &["fry some eggs", "cook an omelette", "make breakfast on the stove"],
        description: "A shallow round cooking vessel with a long handle, typically used for frying food.",
    },
    ObjectSpec {
        name: "magnifying glass",
        shape: ShapeKind::DiskWithHandle,
        parts: [
            part("handle", false, 18.0, HOLD, "The slim grip below the lens."),
            part("lens", true, 20.0, &["the round see-through part", "the part you look through"],
                "The round glass that makes small things look larger."),
        ],
        primitives: &[bar(0, [-15.0, 0.0], [-5.5, 0.0], 4.0), disk(1, [0.0, 0.0], 5.5)],
        functions: &["read the tiny print", "look closely at a small insect", "inspect a coin"],
        description: "A round lens on a handle, typically used for making small details look bigger.",
    },
];

pub fn object_spec(name: &str) -> Option<&'static ObjectSpec> {
    CATALOG.iter().find(|o| o.name == name)
}

/// `"{color} {object}"`.
pub fn object_target_name(color: Color, object: &ObjectSpec) -> String {
    format!("{} {}", color.name(), object.name)
}

/// `"{color} {object} {part}"`.
pub fn part_target_name(color: Color, object: &ObjectSpec, part: usize) -> String {
    format!("{} {} {}", color.name(), object.name, object.parts[part].name)
}
