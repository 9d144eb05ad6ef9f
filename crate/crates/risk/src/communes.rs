//! Commune geometry: pixel membership, exposure counts, neighbor relations,
//! CSV persistence, and a rectangular-partition fixture generator.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Result, RiskError};

#[derive(Clone, Debug, PartialEq)]
pub struct Commune {
    pub id: String,
    /// (row, col) grid coordinates of member pixels.
    pub pixels: Vec<(usize, usize)>,
    /// Residential buildings on clay soils: the insured exposure.
    pub buildings: u64,
    pub neighbors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommuneTable {
    pub communes: Vec<Commune>,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl CommuneTable {
    pub fn new(communes: Vec<Commune>, grid_h: usize, grid_w: usize) -> Result<Self> {
        let ids: HashSet<&str> = communes.iter().map(|c| c.id.as_str()).collect();
        if ids.len() != communes.len() {
            return Err(RiskError::Communes("duplicate commune ids".into()));
        }
        let mut seen = HashSet::new();
        for c in &communes {
            if c.pixels.is_empty() {
                return Err(RiskError::Communes(format!(
                    "commune {} has no pixels",
                    c.id
                )));
            }
            for &(r, col) in &c.pixels {
                if r >= grid_h || col >= grid_w {
                    return Err(RiskError::Communes(format!(
                        "commune {} pixel ({r},{col}) outside {grid_h}x{grid_w}",
                        c.id
                    )));
                }
                if !seen.insert((r, col)) {
                    return Err(RiskError::Communes(format!(
                        "pixel ({r},{col}) belongs to more than one commune"
                    )));
                }
            }
            for n in &c.neighbors {
                if !ids.contains(n.as_str()) {
                    return Err(RiskError::Communes(format!(
                        "commune {} lists unknown neighbor {n}",
                        c.id
                    )));
                }
            }
        }
        // neighbor relation must be symmetric
        for c in &communes {
            for n in &c.neighbors {
                let other = communes.iter().find(|x| &x.id == n).unwrap();
                if !other.neighbors.contains(&c.id) {
                    return Err(RiskError::Communes(format!(
                        "neighbor relation not symmetric: {} -> {n}",
                        c.id
                    )));
                }
            }
        }
        Ok(Self {
            communes,
            grid_h,
            grid_w,
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("id,pixels,buildings,neighbors\n");
        for c in &self.communes {
            let pixels: Vec<String> = c
                .pixels
                .iter()
                .map(|(r, col)| format!("{r}:{col}"))
                .collect();
            out.push_str(&format!(
                "{},{},{},{}\n",
                c.id,
                pixels.join(";"),
                c.buildings,
                c.neighbors.join(";")
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load_csv(path: &Path, grid_h: usize, grid_w: usize) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut communes = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(RiskError::Communes(format!(
                    "line {}: expected 4 columns",
                    i + 1
                )));
            }
            let pixels = cols[1]
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|p| {
                    let (r, c) = p
                        .split_once(':')
                        .ok_or_else(|| RiskError::Communes(format!("bad pixel {p}")))?;
                    Ok((
                        r.parse()
                            .map_err(|_| RiskError::Communes(format!("bad pixel {p}")))?,
                        c.parse()
                            .map_err(|_| RiskError::Communes(format!("bad pixel {p}")))?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            communes.push(Commune {
                id: cols[0].trim().to_string(),
                pixels,
                buildings: cols[2]
                    .trim()
                    .parse()
                    .map_err(|_| RiskError::Communes(format!("bad building count {}", cols[2])))?,
                neighbors: cols[3]
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
            });
        }
        Self::new(communes, grid_h, grid_w)
    }
}

/// Partition a grid into roughly `rows x cols` rectangular communes with
/// deterministic synthetic building counts. Neighbors are 4-adjacent blocks.
pub fn rectangular_communes(
    grid_h: usize,
    grid_w: usize,
    rows: usize,
    cols: usize,
    seed: u64,
) -> CommuneTable {
    assert!(rows > 0 && cols > 0 && rows <= grid_h && cols <= grid_w);
    let mut communes = Vec::with_capacity(rows * cols);
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        state >> 33
    };
    let id_of = |r: usize, c: usize| format!("c{r:02}_{c:02}");
    for br in 0..rows {
        for bc in 0..cols {
            let (y0, y1) = (br * grid_h / rows, (br + 1) * grid_h / rows);
            let (x0, x1) = (bc * grid_w / cols, (bc + 1) * grid_w / cols);
            let mut pixels = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    pixels.push((y, x));
                }
            }
            let mut neighbors = Vec::new();
            if br > 0 {
                neighbors.push(id_of(br - 1, bc));
            }
            if br + 1 < rows {
                neighbors.push(id_of(br + 1, bc));
            }
            if bc > 0 {
                neighbors.push(id_of(br, bc - 1));
            }
            if bc + 1 < cols {
                neighbors.push(id_of(br, bc + 1));
            }
            communes.push(Commune {
                id: id_of(br, bc),
                pixels,
                buildings: 50 + next() % 5000,
                neighbors,
            });
        }
    }
    CommuneTable::new(communes, grid_h, grid_w).expect("fixture partition is valid")
}
