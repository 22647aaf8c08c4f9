//! World maps: static geometry, moving obstacles, and the spawn region,
//! loaded from a small line-oriented text format.
//!
//! A world file is split into sections. Coordinates are meters.
//!
//! ```text
//! [meta]
//! name hallway-straight
//! bounds 0 0 20 3
//!
//! [walls]
//! 0 0 20 0
//! 0 3 20 3 brick
//!
//! [obstacles]
//! circle 6 1.5 0.4
//! rect 9 0.5 1 0.8 metal
//!
//! [movers]
//! 12 1.5 0.3 0.1
//!
//! [spawn]
//! rect 1 0.8 3 2.2
//! heading -0.5 0.5
//! ```
//!
//! Blank lines and `#` comments are ignored. Every parse failure reports the
//! offending file and line number.

use super::geometry::{Rect, Segment, Vec2};
use super::EnvError;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Surface material tags used by the pseudo-RGB renderer. The numeric value
/// indexes the renderer's palette.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Plain = 0,
    Brick = 1,
    Metal = 2,
    Wood = 3,
    Hedge = 4,
    /// Reserved for moving obstacles; not accepted in world files.
    Actor = 5,
}

impl Material {
    pub fn index(self) -> usize {
        self as usize
    }

    fn from_name(name: &str) -> Option<Material> {
        match name {
            "plain" => Some(Material::Plain),
            "brick" => Some(Material::Brick),
            "metal" => Some(Material::Metal),
            "wood" => Some(Material::Wood),
            "hedge" => Some(Material::Hedge),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub seg: Segment,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleObstacle {
    pub center: Vec2,
    pub radius: f64,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectObstacle {
    pub rect: Rect,
    pub material: Material,
}

/// Starting state of a moving obstacle. Movers are circles performing a
/// bounded random walk; their headings are drawn at reset time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoverSpec {
    pub start: Vec2,
    pub radius: f64,
    /// Meters advanced per environment step.
    pub speed: f64,
}

/// Where episodes may begin: positions uniform over `region`, headings
/// uniform over `[heading_min, heading_max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpawnRegion {
    pub region: Rect,
    pub heading_min: f64,
    pub heading_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldMap {
    pub name: String,
    pub bounds: Rect,
    pub walls: Vec<Wall>,
    pub circles: Vec<CircleObstacle>,
    pub rects: Vec<RectObstacle>,
    pub movers: Vec<MoverSpec>,
    pub spawn: SpawnRegion,
}

impl WorldMap {
    pub fn load(path: impl AsRef<Path>) -> Result<WorldMap, EnvError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EnvError::WorldFile {
            origin: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        WorldMap::parse(&text, &path.display().to_string())
    }

    /// Parses world text; `origin` labels error messages (a path or a tag
    /// like `<inline>`).
    pub fn parse(text: &str, origin: &str) -> Result<WorldMap, EnvError> {
        Parser::new(origin).run(text)
    }

    /// The four implicit boundary walls closing off the world.
    pub fn boundary_edges(&self) -> [Segment; 4] {
        self.bounds.edges()
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Meta,
    Walls,
    Obstacles,
    Movers,
    Spawn,
}

struct Parser {
    origin: String,
    name: Option<String>,
    bounds: Option<Rect>,
    walls: Vec<Wall>,
    circles: Vec<CircleObstacle>,
    rects: Vec<RectObstacle>,
    movers: Vec<MoverSpec>,
    spawn_rect: Option<Rect>,
    heading: Option<(f64, f64)>,
}

impl Parser {
    fn new(origin: &str) -> Self {
        Parser {
            origin: origin.to_string(),
            name: None,
            bounds: None,
            walls: Vec::new(),
            circles: Vec::new(),
            rects: Vec::new(),
            movers: Vec::new(),
            spawn_rect: None,
            heading: None,
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> EnvError {
        EnvError::WorldFile {
            origin: self.origin.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn run(mut self, text: &str) -> Result<WorldMap, EnvError> {
        let mut section = Section::None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('[') {
                let name = header
                    .strip_suffix(']')
                    .ok_or_else(|| self.err(line_no, "unterminated section header"))?;
                section = match name {
                    "meta" => Section::Meta,
                    "walls" => Section::Walls,
                    "obstacles" => Section::Obstacles,
                    "movers" => Section::Movers,
                    "spawn" => Section::Spawn,
                    other => return Err(self.err(line_no, format!("unknown section [{other}]"))),
                };
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match section {
                Section::None => {
                    return Err(self.err(line_no, "content before the first section header"))
                }
                Section::Meta => self.meta_line(line_no, &fields)?,
                Section::Walls => self.wall_line(line_no, &fields)?,
                Section::Obstacles => self.obstacle_line(line_no, &fields)?,
                Section::Movers => self.mover_line(line_no, &fields)?,
                Section::Spawn => self.spawn_line(line_no, &fields)?,
            }
        }
        self.finish(text.lines().count())
    }

    fn parse_f64(&self, line: usize, field: &str) -> Result<f64, EnvError> {
        let v: f64 = field
            .parse()
            .map_err(|_| self.err(line, format!("expected a number, found {field:?}")))?;
        if !v.is_finite() {
            return Err(self.err(line, format!("non-finite number {field:?}")));
        }
        Ok(v)
    }

    fn parse_material(&self, line: usize, field: Option<&str>) -> Result<Material, EnvError> {
        match field {
            None => Ok(Material::Plain),
            Some(name) => Material::from_name(name)
                .ok_or_else(|| self.err(line, format!("unknown material {name:?}"))),
        }
    }

    fn meta_line(&mut self, line: usize, fields: &[&str]) -> Result<(), EnvError> {
        match fields[0] {
            "name" => {
                if fields.len() != 2 {
                    return Err(self.err(line, "name takes one value"));
                }
                self.name = Some(fields[1].to_string());
            }
            "bounds" => {
                if fields.len() != 5 {
                    return Err(self.err(line, "bounds takes x_min y_min x_max y_max"));
                }
                let v: Vec<f64> = fields[1..]
                    .iter()
                    .map(|f| self.parse_f64(line, f))
                    .collect::<Result<_, _>>()?;
                if v[0] >= v[2] || v[1] >= v[3] {
                    return Err(self.err(line, "bounds must satisfy min < max on both axes"));
                }
                self.bounds = Some(Rect::new(Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3])));
            }
            other => return Err(self.err(line, format!("unknown meta key {other:?}"))),
        }
        Ok(())
    }

    fn wall_line(&mut self, line: usize, fields: &[&str]) -> Result<(), EnvError> {
        if fields.len() != 4 && fields.len() != 5 {
            return Err(self.err(line, "wall takes x1 y1 x2 y2 [material]"));
        }
        let v: Vec<f64> = fields[..4]
            .iter()
            .map(|f| self.parse_f64(line, f))
            .collect::<Result<_, _>>()?;
        let a = Vec2::new(v[0], v[1]);
        let b = Vec2::new(v[2], v[3]);
        if a == b {
            return Err(self.err(line, "wall endpoints coincide"));
        }
        let material = self.parse_material(line, fields.get(4).copied())?;
        self.walls.push(Wall {
            seg: Segment::new(a, b),
            material,
        });
        Ok(())
    }

    fn obstacle_line(&mut self, line: usize, fields: &[&str]) -> Result<(), EnvError> {
        match fields[0] {
            "circle" => {
                if fields.len() != 4 && fields.len() != 5 {
                    return Err(self.err(line, "circle takes cx cy radius [material]"));
                }
                let v: Vec<f64> = fields[1..4]
                    .iter()
                    .map(|f| self.parse_f64(line, f))
                    .collect::<Result<_, _>>()?;
                if v[2] <= 0.0 {
                    return Err(self.err(line, "circle radius must be positive"));
                }
                let material = self.parse_material(line, fields.get(4).copied())?;
                self.circles.push(CircleObstacle {
                    center: Vec2::new(v[0], v[1]),
                    radius: v[2],
                    material,
                });
            }
            "rect" => {
                if fields.len() != 5 && fields.len() != 6 {
                    return Err(self.err(line, "rect takes x y width height [material]"));
                }
                let v: Vec<f64> = fields[1..5]
                    .iter()
                    .map(|f| self.parse_f64(line, f))
                    .collect::<Result<_, _>>()?;
                if v[2] <= 0.0 || v[3] <= 0.0 {
                    return Err(self.err(line, "rect width and height must be positive"));
                }
                let material = self.parse_material(line, fields.get(5).copied())?;
                self.rects.push(RectObstacle {
                    rect: Rect::new(Vec2::new(v[0], v[1]), Vec2::new(v[0] + v[2], v[1] + v[3])),
                    material,
                });
            }
            other => return Err(self.err(line, format!("unknown obstacle kind {other:?}"))),
        }
        Ok(())
    }

    fn mover_line(&mut self, line: usize, fields: &[&str]) -> Result<(), EnvError> {
        if fields.len() != 4 {
            return Err(self.err(line, "mover takes cx cy radius speed"));
        }
        let v: Vec<f64> = fields
            .iter()
            .map(|f| self.parse_f64(line, f))
            .collect::<Result<_, _>>()?;
        if v[2] <= 0.0 {
            return Err(self.err(line, "mover radius must be positive"));
        }
        if v[3] < 0.0 {
            return Err(self.err(line, "mover speed must be non-negative"));
        }
        self.movers.push(MoverSpec {
            start: Vec2::new(v[0], v[1]),
            radius: v[2],
            speed: v[3],
        });
        Ok(())
    }

    fn spawn_line(&mut self, line: usize, fields: &[&str]) -> Result<(), EnvError> {
        match fields[0] {
            "rect" => {
                if fields.len() != 5 {
                    return Err(self.err(line, "spawn rect takes x_min y_min x_max y_max"));
                }
                let v: Vec<f64> = fields[1..]
                    .iter()
                    .map(|f| self.parse_f64(line, f))
                    .collect::<Result<_, _>>()?;
                if v[0] >= v[2] || v[1] >= v[3] {
                    return Err(self.err(line, "spawn rect must satisfy min < max on both axes"));
                }
                self.spawn_rect = Some(Rect::new(Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3])));
            }
            "heading" => {
                if fields.len() != 3 {
                    return Err(self.err(line, "heading takes min max (radians)"));
                }
                let lo = self.parse_f64(line, fields[1])?;
                let hi = self.parse_f64(line, fields[2])?;
                if lo > hi {
                    return Err(self.err(line, "heading min must not exceed max"));
                }
                self.heading = Some((lo, hi));
            }
            other => return Err(self.err(line, format!("unknown spawn key {other:?}"))),
        }
        Ok(())
    }

    fn finish(self, last_line: usize) -> Result<WorldMap, EnvError> {
        let bounds = match self.bounds {
            Some(b) => b,
            None => return Err(self.err(last_line, "missing [meta] bounds")),
        };
        let name = match self.name.clone() {
            Some(n) => n,
            None => return Err(self.err(last_line, "missing [meta] name")),
        };
        let spawn_rect = match self.spawn_rect {
            Some(r) => r,
            None => return Err(self.err(last_line, "missing [spawn] rect")),
        };
        let (heading_min, heading_max) =
            self.heading.unwrap_or((0.0, std::f64::consts::TAU));

        let inside = |p: Vec2| bounds.contains(p);
        for w in &self.walls {
            if !inside(w.seg.a) || !inside(w.seg.b) {
                return Err(self.err(last_line, "wall extends outside bounds"));
            }
        }
        for c in &self.circles {
            if !inside(c.center) {
                return Err(self.err(last_line, "circle center outside bounds"));
            }
        }
        for r in &self.rects {
            if !inside(r.rect.min) || !inside(r.rect.max) {
                return Err(self.err(last_line, "rect obstacle outside bounds"));
            }
        }
        for m in &self.movers {
            if !inside(m.start) {
                return Err(self.err(last_line, "mover start outside bounds"));
            }
        }
        if !inside(spawn_rect.min) || !inside(spawn_rect.max) {
            return Err(self.err(last_line, "spawn rect outside bounds"));
        }

        Ok(WorldMap {
            name,
            bounds,
            walls: self.walls,
            circles: self.circles,
            rects: self.rects,
            movers: self.movers,
            spawn: SpawnRegion {
                region: spawn_rect,
                heading_min,
                heading_max,
            },
        })
    }
}
