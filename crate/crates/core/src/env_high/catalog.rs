//! Closed object/receptacle universe of MiniHouse.

/// Pickable objects. Every one also exists as a `_2` duplicate instance.
pub const OBJECTS: &[&str] = &[
    "Apple",
    "Potato",
    "Tomato",
    "Egg",
    "Bread",
    "Lettuce",
    "Mug",
    "Cup",
    "Plate",
    "Bowl",
    "Spoon",
    "SoapBar",
    "Book",
    "CellPhone",
    "RemoteControl",
    "Pencil",
];

pub const RECEPTACLES: &[&str] = &[
    "CounterTop",
    "DiningTable",
    "SideTable",
    "Desk",
    "Shelf",
    "Sofa",
    "Cabinet",
    "Drawer",
    "Fridge",
    "Microwave",
    "SinkBasin",
    "GarbageCan",
    "Floor",
];

/// Toggleable fixtures that live inside a receptacle and cannot be picked up.
pub const FIXTURES: &[(&str, &str)] = &[("Faucet", "SinkBasin"), ("DeskLamp", "Desk")];

pub const OPENABLE: &[&str] = &["Cabinet", "Drawer", "Fridge", "Microwave"];
pub const TOGGLEABLE: &[&str] = &["Faucet", "DeskLamp", "Microwave"];
pub const SLICEABLE: &[&str] = &["Apple", "Potato", "Tomato", "Bread", "Lettuce"];

/// Where objects may start an episode (never openable, so nothing starts hidden).
pub const START_RECEPTACLES: &[&str] = &["CounterTop", "DiningTable", "SideTable", "Desk", "Shelf", "Sofa"];

pub const PLACE_DESTINATIONS: &[&str] = &[
    "CounterTop",
    "DiningTable",
    "SideTable",
    "Desk",
    "Shelf",
    "Sofa",
    "Cabinet",
    "Drawer",
    "Fridge",
    "GarbageCan",
];

pub const CLEANABLE: &[&str] = &[
    "Apple", "Tomato", "Lettuce", "Potato", "Mug", "Cup", "Plate", "Bowl", "Spoon", "SoapBar",
];
pub const HEATABLE: &[&str] = &["Apple", "Potato", "Tomato", "Egg", "Bread", "Mug", "Cup"];
pub const COOLABLE: &[&str] = &["Apple", "Potato", "Tomato", "Egg", "Bread", "Lettuce", "Mug", "Cup", "Bowl"];
pub const EXAMINABLE: &[&str] = &["Book", "CellPhone", "RemoteControl", "Mug", "Bowl", "Pencil", "Cup", "Plate"];

/// Every name token in the closed universe, in vocabulary order.
pub fn all_names() -> Vec<String> {
    let mut out = Vec::new();
    for o in OBJECTS {
        out.push((*o).to_string());
        out.push(format!("{o}_2"));
    }
    out.extend(RECEPTACLES.iter().map(|r| r.to_string()));
    out.extend(FIXTURES.iter().map(|(f, _)| f.to_string()));
    out
}

/// Strips a `_k` instance suffix: `Apple_2` -> `Apple`.
pub fn base_name(name: &str) -> &str {
    match name.rsplit_once('_') {
        Some((base, idx)) if idx.chars().all(|c| c.is_ascii_digit()) && !idx.is_empty() => base,
        _ => name,
    }
}

pub fn is_object(name: &str) -> bool {
    OBJECTS.contains(&base_name(name))
}

pub fn is_receptacle(name: &str) -> bool {
    RECEPTACLES.contains(&name)
}

pub fn is_fixture(name: &str) -> bool {
    FIXTURES.iter().any(|(f, _)| *f == name)
}

pub fn is_openable(name: &str) -> bool {
    OPENABLE.contains(&name)
}

pub fn is_toggleable(name: &str) -> bool {
    TOGGLEABLE.contains(&name)
}

pub fn is_sliceable(name: &str) -> bool {
    SLICEABLE.contains(&base_name(name))
}
