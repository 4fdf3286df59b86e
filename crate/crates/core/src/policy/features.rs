//! Symbolic state features read off the input token sequence.
//!
//! The input is split into segments by its marker tokens. Each token yields
//! hashed `(segment, slot, token)` indicator features, plus a few relational
//! features that tie observation entries back to the instruction (is this the
//! task object? is the gripper above the target?). Copyable tokens (names,
//! integers, colors, shapes) are also emitted as copy candidates keyed by
//! their structural role, so the decoder can point at them.

use crate::env_low::palette::Shape;
use crate::vocab::{vocab, Marker, Special, TokenClass, TokenId};

pub const NUM_FEATURES: usize = 1 << 12;
pub const NUM_ROLES: usize = 1 << 9;
/// History entries older than this share one age bucket.
const MAX_AGE: u64 = 5;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Features {
    /// Active feature indices (with multiplicity).
    pub bag: Vec<u32>,
    /// `(role, token)` pairs the decoder may copy.
    pub copies: Vec<(u32, TokenId)>,
}

fn mix(mut h: u64, x: u64) -> u64 {
    h ^= x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}

fn key(parts: &[u64]) -> u64 {
    parts.iter().fold(0xC0FF_EE00_u64, |h, &p| mix(h, p))
}

// Segment ids.
const S_INSTR: u64 = 1;
const S_OBS_AT: u64 = 2;
const S_GRIP: u64 = 3;
const S_PROP: u64 = 4;
const S_OBS_FB: u64 = 5;
const S_H_STEP: u64 = 6;
const S_H_THINK: u64 = 7;
const S_H_THINK_POS: u64 = 8;
const S_H_ACT: u64 = 9;
const S_H_FB: u64 = 10;
const S_REL: u64 = 11;
const S_H_ACT_REL: u64 = 12;
const S_LOBS: u64 = 13;
const S_LGRIP: u64 = 14;
const S_TGT: u64 = 15;
const S_CNT: u64 = 16;
const S_GREL: u64 = 17;
const S_QUERY: u64 = 18;
const S_EXT: u64 = 19;
const S_INSTR_BAG: u64 = 20;
const S_TASK_PROP: u64 = 21;
const S_H_THINK_REL: u64 = 22;
const S_QACT: u64 = 23;

struct Builder {
    f: Features,
}

impl Builder {
    fn feat(&mut self, parts: &[u64], tok: TokenId) {
        let mut p = parts.to_vec();
        p.push(1_000_000 + tok.0 as u64);
        self.flag(&p);
    }

    fn flag(&mut self, parts: &[u64]) {
        self.f.bag.push((key(parts) % NUM_FEATURES as u64) as u32);
    }

    fn copy(&mut self, parts: &[u64], tok: TokenId) {
        if copyable(tok) {
            self.f.copies.push(((key(parts) % NUM_ROLES as u64) as u32, tok));
        }
    }

    fn both(&mut self, parts: &[u64], tok: TokenId) {
        self.feat(parts, tok);
        self.copy(parts, tok);
    }
}

fn copyable(t: TokenId) -> bool {
    matches!(
        vocab().class(t),
        TokenClass::Name | TokenClass::Int | TokenClass::Color | TokenClass::Shape | TokenClass::Skill
    )
}

/// Relation of a name token to the instruction's object/destination.
fn relation(t: TokenId, obj: Option<&str>, dest: Option<&str>) -> u64 {
    let Some(n) = vocab().as_name(t) else { return 0 };
    if Some(n) == obj {
        1
    } else if obj.is_some_and(|o| n.strip_suffix("_2") == Some(o)) {
        2
    } else if Some(n) == dest {
        3
    } else {
        4
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Seg {
    None,
    Instr,
    HistStep,
    HistThink,
    HistAct,
    HistFb,
    Obs,
    Grip,
    ObsFb,
    Query,
    /// k-th action listed after a query marker.
    QueryAct(u64),
    Ext,
}

pub fn featurize(x: &[TokenId]) -> Features {
    let v = vocab();
    let mut b = Builder { f: Features::default() };
    let marker = |t: TokenId| if v.class(t) == TokenClass::Marker { Some(v.surface(t)) } else { None };
    let is = |t: TokenId, m: Marker| t == v.marker(m);

    // Instruction fields: (object, destination) for houses, or
    // (target color, target shape, container color) for tables.
    let instr: Vec<TokenId> = x
        .iter()
        .skip_while(|&&t| !is(t, Marker::Instr))
        .skip(1)
        .take_while(|&&t| marker(t).is_none())
        .copied()
        .collect();
    let names: Vec<&str> = instr.iter().filter_map(|&t| v.as_name(t)).collect();
    let (obj, dest) = (names.first().copied(), names.get(1).copied());
    let colors: Vec<_> = instr.iter().filter_map(|&t| v.as_color(t)).collect();
    let shapes: Vec<_> = instr.iter().filter_map(|&t| v.as_shape(t)).collect();
    let low_target = (colors.len() >= 2 && !shapes.is_empty()).then(|| (colors[0], shapes[0], colors[1]));

    let n_hist = x.iter().filter(|&&t| is(t, Marker::Hist)).count() as u64;
    let mut hist_idx = 0u64;
    let mut seg = Seg::None;
    let mut pos = 0u64;
    let mut entity = 0u64;
    let mut age = 0u64;
    let mut query_acts: Option<u64> = None;
    let mut last_name_rel = 0u64;
    let mut obs_low: Vec<TokenId> = Vec::new();
    let mut grip_low: Vec<TokenId> = Vec::new();

    for &t in x {
        if marker(t).is_some() {
            seg = match () {
                _ if is(t, Marker::Instr) => Seg::Instr,
                _ if is(t, Marker::Hist) => {
                    age = (n_hist - 1 - hist_idx).min(MAX_AGE);
                    hist_idx += 1;
                    Seg::HistStep
                }
                _ if is(t, Marker::Thinking) => Seg::HistThink,
                _ if is(t, Marker::Act) => match query_acts.as_mut() {
                    Some(k) => {
                        *k += 1;
                        Seg::QueryAct(*k - 1)
                    }
                    None => Seg::HistAct,
                },
                _ if is(t, Marker::Fb) => {
                    if matches!(seg, Seg::Obs | Seg::Grip) {
                        Seg::ObsFb
                    } else {
                        Seg::HistFb
                    }
                }
                _ if is(t, Marker::Obs) => Seg::Obs,
                _ if is(t, Marker::Grip) => Seg::Grip,
                _ if is(t, Marker::Query) => {
                    query_acts = Some(0);
                    Seg::Query
                }
                _ => Seg::Ext,
            };
            pos = 0;
            entity = 0;
            continue;
        }
        let class = v.class(t);
        match seg {
            Seg::None => {}
            Seg::Instr => {
                b.both(&[S_INSTR, pos], t);
                b.feat(&[S_INSTR_BAG], t);
            }
            Seg::HistStep => b.feat(&[S_H_STEP, age], t),
            Seg::HistThink => {
                b.feat(&[S_H_THINK, age], t);
                b.both(&[S_H_THINK_POS, age, pos], t);
                if class == TokenClass::Name {
                    b.flag(&[S_H_THINK_REL, age, pos, relation(t, obj, dest)]);
                }
            }
            Seg::HistAct => {
                b.both(&[S_H_ACT, age, pos], t);
                if class == TokenClass::Name {
                    b.flag(&[S_H_ACT_REL, age, pos, relation(t, obj, dest)]);
                }
            }
            Seg::HistFb => b.feat(&[S_H_FB, age], t),
            Seg::ObsFb => b.feat(&[S_OBS_FB], t),
            Seg::Obs => {
                if low_target.is_some() || matches!(class, TokenClass::Color | TokenClass::Shape | TokenClass::Int) {
                    obs_low.push(t);
                    b.both(&[S_LOBS, pos / 5, pos % 5], t);
                } else {
                    b.both(&[S_OBS_AT], t);
                    if class == TokenClass::Name || t == v.special(Special::None) {
                        b.flag(&[S_REL, 0, relation(t, obj, dest)]);
                    }
                }
            }
            Seg::Grip => {
                if low_target.is_some() {
                    grip_low.push(t);
                    b.both(&[S_LGRIP, pos], t);
                } else if class == TokenClass::Property {
                    b.feat(&[S_PROP, entity], t);
                    b.feat(&[S_PROP, entity, last_name_rel], t);
                    if last_name_rel == 1 || last_name_rel == 2 {
                        b.feat(&[S_TASK_PROP, last_name_rel], t);
                    }
                } else {
                    // held, receptacle, then contents (all sharing one slot)
                    entity = (entity + 1).min(3);
                    last_name_rel = relation(t, obj, dest);
                    b.both(&[S_GRIP, entity], t);
                    b.flag(&[S_REL, entity, last_name_rel]);
                }
            }
            Seg::Query => b.both(&[S_QUERY, pos.min(24)], t),
            Seg::QueryAct(k) => b.both(&[S_QACT, k.min(9), pos], t),
            Seg::Ext => b.feat(&[S_EXT], t),
        }
        pos += 1;
    }

    if let Some((tc, ts, cc)) = low_target {
        low_relations(&mut b, &obs_low, &grip_low, tc, ts, cc);
    }
    b.f
}

/// Target/container fields and gripper-relative flags for table scenes.
fn low_relations(
    b: &mut Builder,
    obs: &[TokenId],
    grip: &[TokenId],
    tc: crate::env_low::palette::Color,
    ts: Shape,
    cc: crate::env_low::palette::Color,
) {
    let v = vocab();
    let entries: Vec<&[TokenId]> = obs.chunks(5).filter(|c| c.len() == 5).collect();
    let ints = |c: &[TokenId]| -> Option<[i32; 3]> {
        Some([v.as_int(c[0])? as i32, v.as_int(c[1])? as i32, v.as_int(c[2])? as i32])
    };
    let gxyz = (grip.len() >= 4).then(|| ints(&grip[..3])).flatten();
    let gopen = grip.get(3).and_then(|&t| v.as_int(t));
    for (slot, e) in entries.iter().enumerate() {
        let (Some(c), Some(s)) = (v.as_color(e[0]), v.as_shape(e[1])) else { continue };
        let role = if c == tc && s == ts {
            S_TGT
        } else if c == cc && s == Shape::Container {
            S_CNT
        } else {
            continue;
        };
        b.flag(&[role, 99, slot as u64]);
        for (f, &t) in e.iter().enumerate() {
            b.both(&[role, f as u64], t);
        }
        if let (Some(o), Some(g)) = (ints(&e[2..5]), gxyz) {
            let xy = (o[0] == g[0] && o[1] == g[1]) as u64;
            let dz = (g[2] - o[2]).clamp(-1, 11) as u64;
            b.flag(&[S_GREL, role, xy, dz, gopen.unwrap_or(2) as u64]);
            b.flag(&[S_GREL, role, xy, gopen.unwrap_or(2) as u64]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_high::{reset, TaskSpec, TaskTemplate};
    use crate::env_low::palette::Color;
    use crate::env_low::{reset_low, ManipTask};

    #[test]
    fn features_are_deterministic_and_in_range() {
        let task = TaskSpec::new(TaskTemplate::Heat, "Potato", Some("CounterTop"), 0, 0).unwrap();
        let (_, obs) = reset(&task, 0).unwrap();
        let x = [task.instruction_tokens(), obs.tokens].concat();
        let a = featurize(&x);
        assert_eq!(a, featurize(&x));
        assert!(a.bag.iter().all(|&f| (f as usize) < NUM_FEATURES));
        assert!(a.copies.iter().all(|&(r, _)| (r as usize) < NUM_ROLES));
        assert!(a.copies.iter().any(|&(_, t)| vocab().as_name(t) == Some("Potato")));
    }

    #[test]
    fn table_features_locate_target() {
        let task = ManipTask::new(Color::Red, Shape::Star, Color::Blue, 0, 0).unwrap();
        let (s, obs) = reset_low(&task, 0).unwrap();
        let x = [task.instruction_tokens(), obs.tokens].concat();
        let f = featurize(&x);
        let star = s.object(&task.target_name()).unwrap().coord;
        let role = (key(&[S_TGT, 2]) % NUM_ROLES as u64) as u32;
        assert!(f.copies.contains(&(role, vocab().int(star[0]).unwrap())));
    }
}
