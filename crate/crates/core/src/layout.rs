//! Virtual indoor layouts: rooms, doors, the JSON document format and
//! structural validation against the tracked space.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Rect, Side, Vec2, WallSegment};

/// Doors narrower than this are not walkable.
pub const MIN_DOOR_WIDTH: f64 = 0.8;

/// Coordinates closer than this are treated as the same wall line.
const COINCIDENT_EPS: f64 = 1e-9;

/// The fixed rectangular tracked area, centered on the tracking origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RealSpace {
    pub rect: Rect,
}

impl RealSpace {
    pub fn new(width: f64, depth: f64) -> Self {
        RealSpace {
            rect: Rect::from_dims(Vec2::ZERO, width, depth),
        }
    }

    pub fn center(&self) -> Vec2 {
        self.rect.center
    }

    pub fn width(&self) -> f64 {
        self.rect.width()
    }

    pub fn depth(&self) -> f64 {
        self.rect.depth()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoomId(pub String);

impl RoomId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RoomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RoomId {
    fn from(s: &str) -> Self {
        RoomId(s.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Room {
    pub id: RoomId,
    /// Original width (x) and depth (y), never changed by redirection.
    pub width: f64,
    pub depth: f64,
    /// Placement in the virtual map.
    pub virtual_rect: Rect,
    /// Placement in tracked-space coordinates. Equal to `virtual_rect` right
    /// after parsing; only the redirection engine moves it.
    pub current_rect: Rect,
    pub color: String,
}

impl Room {
    /// The room at its original dimensions centered on `center`.
    pub fn original_at(&self, center: Vec2) -> Rect {
        Rect::from_dims(center, self.width, self.depth)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoorState {
    Open,
    Closed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Door {
    pub room_a: RoomId,
    pub room_b: RoomId,
    /// Which wall of `room_a` carries the door.
    pub side: Side,
    /// Signed offset of the door center from the wall midpoint, along +x for
    /// North/South walls and +y for East/West walls.
    pub offset: f64,
    pub width: f64,
    /// Opening in virtual-map coordinates.
    pub segment: WallSegment,
}

impl Door {
    pub fn connects(&self, a: &RoomId, b: &RoomId) -> bool {
        (&self.room_a == a && &self.room_b == b) || (&self.room_a == b && &self.room_b == a)
    }

    pub fn other(&self, room: &RoomId) -> Option<&RoomId> {
        if &self.room_a == room {
            Some(&self.room_b)
        } else if &self.room_b == room {
            Some(&self.room_a)
        } else {
            None
        }
    }
}

/// Rooms and doors of a virtual environment. Immutable after parsing.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualLayout {
    /// Tracked space declared by the document.
    pub real_space: RealSpace,
    pub rooms: Vec<Room>,
    pub doors: Vec<Door>,
}

impl VirtualLayout {
    pub fn room_index(&self, id: &RoomId) -> Option<usize> {
        self.rooms.iter().position(|r| &r.id == id)
    }

    pub fn room(&self, id: &RoomId) -> Option<&Room> {
        self.rooms.iter().find(|r| &r.id == id)
    }

    /// Indices of doors touching room `idx`, in document order.
    pub fn doors_of(&self, idx: usize) -> Vec<usize> {
        let id = &self.rooms[idx].id;
        self.doors
            .iter()
            .enumerate()
            .filter(|(_, d)| &d.room_a == id || &d.room_b == id)
            .map(|(i, _)| i)
            .collect()
    }

    /// Index-level adjacency: sorted, deduplicated neighbor indices.
    pub fn neighbor_indices(&self, idx: usize) -> Vec<usize> {
        let id = &self.rooms[idx].id;
        let set: BTreeSet<usize> = self
            .doors
            .iter()
            .filter_map(|d| d.other(id))
            .filter_map(|other| self.room_index(other))
            .collect();
        set.into_iter().collect()
    }
}

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("syntax error at line {line}, column {column} (field {path}): {message}")]
    Syntax {
        line: usize,
        column: usize,
        path: String,
        message: String,
    },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("door {door}: unknown room {room:?}")]
    UnknownRoom { door: usize, room: String },
    #[error("unknown room {0:?}")]
    UnknownId(String),
    #[error("invalid layout: {0}")]
    Invalid(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RealSpaceDoc {
    width: f64,
    depth: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoomDoc {
    id: String,
    width: f64,
    depth: f64,
    x: f64,
    y: f64,
    color: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DoorDoc {
    a: String,
    b: String,
    side: Side,
    offset: f64,
    width: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutDoc {
    real_space: RealSpaceDoc,
    rooms: Vec<RoomDoc>,
    doors: Vec<DoorDoc>,
}

fn door_segment(room: &Rect, side: Side, offset: f64, width: f64) -> WallSegment {
    let wall = room.wall(side);
    let mid = wall.midpoint();
    let along = if side.is_horizontal() {
        Vec2::new(1.0, 0.0)
    } else {
        Vec2::new(0.0, 1.0)
    };
    let c = mid + along * offset;
    let half = along * (width / 2.0);
    WallSegment::new(c - half, c + half, side)
}

fn check_finite(what: &str, values: &[f64]) -> Result<(), LayoutError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LayoutError::Invalid(format!("{what}: non-finite number")))
    }
}

/// Parses a layout document. Rooms start with `current_rect == virtual_rect`.
pub fn parse_layout(text: &str) -> Result<VirtualLayout, LayoutError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: LayoutDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        LayoutError::Syntax {
            line: inner.line(),
            column: inner.column(),
            path,
            message: inner.to_string(),
        }
    })?;
    from_doc(doc)
}

fn from_doc(doc: LayoutDoc) -> Result<VirtualLayout, LayoutError> {
    let rs = &doc.real_space;
    check_finite("real_space", &[rs.width, rs.depth])?;
    if rs.width <= 0.0 || rs.depth <= 0.0 {
        return Err(LayoutError::Invalid("real_space dimensions must be positive".into()));
    }
    let real_space = RealSpace::new(rs.width, rs.depth);

    let mut seen = HashMap::new();
    let mut rooms = Vec::with_capacity(doc.rooms.len());
    for (i, r) in doc.rooms.into_iter().enumerate() {
        if seen.insert(r.id.clone(), i).is_some() {
            return Err(LayoutError::DuplicateId(r.id));
        }
        check_finite(&format!("room {}", r.id), &[r.width, r.depth, r.x, r.y])?;
        if r.width <= 0.0 || r.depth <= 0.0 {
            return Err(LayoutError::Invalid(format!(
                "room {} must have positive width and depth",
                r.id
            )));
        }
        let rect = Rect::from_dims(Vec2::new(r.x, r.y), r.width, r.depth);
        rooms.push(Room {
            id: RoomId(r.id),
            width: r.width,
            depth: r.depth,
            virtual_rect: rect,
            current_rect: rect,
            color: r.color,
        });
    }

    let mut doors = Vec::with_capacity(doc.doors.len());
    for (i, d) in doc.doors.into_iter().enumerate() {
        let ia = *seen.get(&d.a).ok_or_else(|| LayoutError::UnknownRoom {
            door: i,
            room: d.a.clone(),
        })?;
        if !seen.contains_key(&d.b) {
            return Err(LayoutError::UnknownRoom { door: i, room: d.b });
        }
        if d.a == d.b {
            return Err(LayoutError::Invalid(format!(
                "door {i} connects room {} to itself",
                d.a
            )));
        }
        check_finite(&format!("door {i}"), &[d.offset, d.width])?;
        if d.width <= 0.0 {
            return Err(LayoutError::Invalid(format!("door {i} must have positive width")));
        }
        let segment = door_segment(&rooms[ia].virtual_rect, d.side, d.offset, d.width);
        doors.push(Door {
            room_a: RoomId(d.a),
            room_b: RoomId(d.b),
            side: d.side,
            offset: d.offset,
            width: d.width,
            segment,
        });
    }

    Ok(VirtualLayout {
        real_space,
        rooms,
        doors,
    })
}

/// Canonical document form; `parse_layout` of the result reproduces `layout`.
pub fn serialize_layout(layout: &VirtualLayout) -> String {
    let doc = LayoutDoc {
        real_space: RealSpaceDoc {
            width: layout.real_space.width(),
            depth: layout.real_space.depth(),
        },
        rooms: layout
            .rooms
            .iter()
            .map(|r| RoomDoc {
                id: r.id.0.clone(),
                width: r.width,
                depth: r.depth,
                x: r.virtual_rect.center.x,
                y: r.virtual_rect.center.y,
                color: r.color.clone(),
            })
            .collect(),
        doors: layout
            .doors
            .iter()
            .map(|d| DoorDoc {
                a: d.room_a.0.clone(),
                b: d.room_b.0.clone(),
                side: d.side,
                offset: d.offset,
                width: d.width,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("layout document serializes")
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ViolationKind {
    RoomTooWide,
    RoomTooDeep,
    DoorNotShared,
    DoorTooNarrow,
    NotConnected,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct LayoutViolation {
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for LayoutViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn door_on_shared_wall(layout: &VirtualLayout, door: &Door) -> bool {
    let (Some(a), Some(b)) = (layout.room(&door.room_a), layout.room(&door.room_b)) else {
        return false;
    };
    let wa = a.virtual_rect.wall(door.side);
    let wb = b.virtual_rect.wall(door.side.opposite());
    if (wa.line_coord() - wb.line_coord()).abs() > COINCIDENT_EPS {
        return false;
    }
    let (lo, hi) = door.segment.span();
    let (a_lo, a_hi) = wa.span();
    let (b_lo, b_hi) = wb.span();
    lo >= a_lo.max(b_lo) - COINCIDENT_EPS && hi <= a_hi.min(b_hi) + COINCIDENT_EPS && hi > lo
}

fn is_connected(layout: &VirtualLayout) -> bool {
    if layout.rooms.is_empty() {
        return true;
    }
    let mut seen = vec![false; layout.rooms.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in layout.neighbor_indices(i) {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Lists every structural problem of `layout` against `real`. Empty means the
/// layout can be navigated. The result is sorted, so it does not depend on
/// document order.
pub fn validate(layout: &VirtualLayout, real: &RealSpace) -> Vec<LayoutViolation> {
    let mut out = Vec::new();
    for room in &layout.rooms {
        if room.width > real.width() {
            out.push(LayoutViolation {
                kind: ViolationKind::RoomTooWide,
                message: format!("room {} exceeds real space width", room.id),
            });
        }
        if room.depth > real.depth() {
            out.push(LayoutViolation {
                kind: ViolationKind::RoomTooDeep,
                message: format!("room {} exceeds real space depth", room.id),
            });
        }
    }
    for door in &layout.doors {
        let name = format!(
            "door {}-{} ({} wall of {})",
            door.room_a, door.room_b, door.side, door.room_a
        );
        if !door_on_shared_wall(layout, door) {
            out.push(LayoutViolation {
                kind: ViolationKind::DoorNotShared,
                message: format!("{name} is not on a wall shared by both rooms"),
            });
        }
        if door.width < MIN_DOOR_WIDTH {
            out.push(LayoutViolation {
                kind: ViolationKind::DoorTooNarrow,
                message: format!("{name} is narrower than {MIN_DOOR_WIDTH} m"),
            });
        }
    }
    if !is_connected(layout) {
        out.push(LayoutViolation {
            kind: ViolationKind::NotConnected,
            message: "layout not connected".to_string(),
        });
    }
    out.sort();
    out.dedup();
    out
}

/// Rooms joined to `id` by at least one door.
pub fn neighbors(layout: &VirtualLayout, id: &RoomId) -> Result<BTreeSet<RoomId>, LayoutError> {
    if layout.room(id).is_none() {
        return Err(LayoutError::UnknownId(id.0.clone()));
    }
    Ok(layout.doors.iter().filter_map(|d| d.other(id)).cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_rooms() -> &'static str {
        r#"{
            "real_space": {"width": 4, "depth": 4},
            "rooms": [
                {"id": "A", "width": 3, "depth": 3, "x": 0, "y": 0, "color": "red"},
                {"id": "B", "width": 3, "depth": 3, "x": 3, "y": 0, "color": "blue"}
            ],
            "doors": [{"a": "A", "b": "B", "side": "East", "offset": 0, "width": 1}]
        }"#
    }

    fn chain_abc() -> VirtualLayout {
        parse_layout(
            r#"{
            "real_space": {"width": 4, "depth": 4},
            "rooms": [
                {"id": "A", "width": 3, "depth": 3, "x": 0, "y": 0, "color": "red"},
                {"id": "B", "width": 3, "depth": 3, "x": 3, "y": 0, "color": "blue"},
                {"id": "C", "width": 3, "depth": 3, "x": 6, "y": 0, "color": "green"}
            ],
            "doors": [
                {"a": "A", "b": "B", "side": "East", "offset": 0, "width": 1},
                {"a": "B", "b": "C", "side": "East", "offset": 0.5, "width": 1},
                {"a": "C", "b": "B", "side": "West", "offset": -0.8, "width": 0.9}
            ]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_minimal_layout() {
        let l = parse_layout(two_rooms()).unwrap();
        assert_eq!(l.rooms.len(), 2);
        assert_eq!(l.doors.len(), 1);
        assert_eq!(l.rooms[1].current_rect, l.rooms[1].virtual_rect);
        let seg = l.doors[0].segment;
        assert_eq!(seg.a, Vec2::new(1.5, -0.5));
        assert_eq!(seg.b, Vec2::new(1.5, 0.5));
        assert!(validate(&l, &l.real_space).is_empty());
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = two_rooms().replace("\"id\": \"B\"", "\"id\": \"A\"");
        let err = parse_layout(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate id"), "{err}");
    }

    #[test]
    fn unknown_room_rejected() {
        let text = two_rooms().replace("\"b\": \"B\"", "\"b\": \"Z\"");
        let err = parse_layout(&text).unwrap_err();
        assert!(err.to_string().contains("unknown room"), "{err}");
    }

    #[test]
    fn unknown_field_reports_path() {
        let text = two_rooms().replace("\"color\": \"red\"", "\"color\": \"red\", \"height\": 2");
        match parse_layout(&text).unwrap_err() {
            LayoutError::Syntax { path, line, .. } => {
                assert!(path.starts_with("rooms[0]"), "{path}");
                assert_eq!(line, 4);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_json_is_syntax_error() {
        assert!(matches!(parse_layout("{\"rooms\": ["), Err(LayoutError::Syntax { .. })));
    }

    #[test]
    fn oversized_room_violation() {
        let text = two_rooms().replace(
            "{\"id\": \"A\", \"width\": 3, \"depth\": 3, \"x\": 0",
            "{\"id\": \"A\", \"width\": 5, \"depth\": 3, \"x\": -1",
        );
        let l = parse_layout(&text).unwrap();
        let v = validate(&l, &RealSpace::new(4.0, 4.0));
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].message, "room A exceeds real space width");
    }

    #[test]
    fn rotation_is_not_allowed_to_fit() {
        let l = parse_layout(two_rooms()).unwrap();
        // 3x3 rooms fit 4x4 but not a 4x2 space even though area would allow it.
        let v = validate(&l, &RealSpace::new(4.0, 2.0));
        assert!(v.iter().all(|x| x.kind == ViolationKind::RoomTooDeep));
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn disconnected_layout_violation() {
        let text = two_rooms().replace(
            "\"doors\": [{\"a\": \"A\", \"b\": \"B\", \"side\": \"East\", \"offset\": 0, \"width\": 1}]",
            "\"doors\": []",
        );
        let l = parse_layout(&text).unwrap();
        let v = validate(&l, &l.real_space);
        assert_eq!(
            v.iter().map(|x| x.message.as_str()).collect::<Vec<_>>(),
            ["layout not connected"]
        );
    }

    #[test]
    fn door_checks() {
        let narrow = two_rooms().replace("\"width\": 1}", "\"width\": 0.5}");
        let l = parse_layout(&narrow).unwrap();
        assert_eq!(validate(&l, &l.real_space)[0].kind, ViolationKind::DoorTooNarrow);

        let off_wall = two_rooms().replace("\"side\": \"East\"", "\"side\": \"North\"");
        let l = parse_layout(&off_wall).unwrap();
        assert_eq!(validate(&l, &l.real_space)[0].kind, ViolationKind::DoorNotShared);

        let overhang = two_rooms().replace("\"offset\": 0,", "\"offset\": 1.2,");
        let l = parse_layout(&overhang).unwrap();
        assert_eq!(validate(&l, &l.real_space)[0].kind, ViolationKind::DoorNotShared);
    }

    #[test]
    fn neighbors_examples() {
        let l = chain_abc();
        let n = neighbors(&l, &"B".into()).unwrap();
        assert_eq!(
            n.into_iter().collect::<Vec<_>>(),
            vec![RoomId::from("A"), RoomId::from("C")]
        );
        // Two doors between B and C collapse to one neighbor.
        assert_eq!(neighbors(&l, &"C".into()).unwrap().len(), 1);
        assert!(matches!(neighbors(&l, &"Q".into()), Err(LayoutError::UnknownId(_))));
        assert!(
            validate(&l, &l.real_space).is_empty(),
            "{:?}",
            validate(&l, &l.real_space)
        );
    }

    #[test]
    fn door_free_room_has_no_neighbors() {
        let text = r#"{"real_space": {"width": 4, "depth": 4},
            "rooms": [{"id": "A", "width": 1, "depth": 1, "x": 0, "y": 0, "color": "x"},
                      {"id": "B", "width": 1, "depth": 1, "x": 5, "y": 0, "color": "x"}],
            "doors": []}"#;
        let l = parse_layout(text).unwrap();
        assert!(neighbors(&l, &"A".into()).unwrap().is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Rooms on a row of 3x3 cells with random colors and door offsets.
        fn arb_layout() -> impl Strategy<Value = (VirtualLayout, Vec<usize>)> {
            (2usize..6, proptest::collection::vec(-0.9..0.9f64, 5), any::<u64>()).prop_map(|(n, offsets, salt)| {
                let rooms: Vec<String> = (0..n)
                    .map(|i| {
                        format!(
                            r#"{{"id": "R{i}", "width": 3, "depth": {d}, "x": {x}, "y": 0, "color": "c{salt}"}}"#,
                            d = 2.0 + (i % 2) as f64,
                            x = 3 * i
                        )
                    })
                    .collect();
                let doors: Vec<String> = (0..n - 1)
                    .map(|i| {
                        format!(
                            r#"{{"a": "R{i}", "b": "R{j}", "side": "East", "offset": {o}, "width": 0.8}}"#,
                            j = i + 1,
                            o = offsets[i] * 0.5
                        )
                    })
                    .collect();
                let text = format!(
                    r#"{{"real_space": {{"width": 4, "depth": 4}}, "rooms": [{}], "doors": [{}]}}"#,
                    rooms.join(","),
                    doors.join(",")
                );
                let perm: Vec<usize> = {
                    let mut p: Vec<usize> = (0..n).collect();
                    p.rotate_left((salt % n as u64) as usize);
                    p
                };
                (parse_layout(&text).unwrap(), perm)
            })
        }

        proptest! {
            #[test]
            fn serialize_round_trip((layout, _) in arb_layout()) {
                let again = parse_layout(&serialize_layout(&layout)).unwrap();
                prop_assert_eq!(again, layout);
            }

            #[test]
            fn validate_ignores_document_order((layout, perm) in arb_layout(), shrink in 3.0..5.0f64) {
                let mut permuted = layout.clone();
                permuted.rooms = perm.iter().map(|&i| layout.rooms[i].clone()).collect();
                permuted.doors.reverse();
                let real = RealSpace::new(shrink, shrink - 0.5);
                prop_assert_eq!(validate(&layout, &real), validate(&permuted, &real));
            }

            #[test]
            fn neighbors_symmetric((layout, _) in arb_layout()) {
                for a in &layout.rooms {
                    for b in neighbors(&layout, &a.id).unwrap() {
                        prop_assert!(neighbors(&layout, &b).unwrap().contains(&a.id));
                    }
                }
            }
        }
    }
}
