use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::sample::Image;
use crate::tensor::Precision;

/// Solid block, plus sign, horizontal bar and vertical bar.
pub const SHAPES: [&str; 4] = ["square", "cross", "bar", "pole"];
pub const COLORS: [&str; 4] = ["red", "green", "blue", "yellow"];
pub const RGB: [[f64; 3]; 4] = [[1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0], [1.0, 1.0, -1.0]];

pub const GRID: usize = 4;
pub const CELL: usize = 8;
pub const SIDE: usize = GRID * CELL;
/// Object extent inside a cell, leaving a one-pixel margin.
pub const EXTENT: usize = CELL - 2;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub shape: usize,
    pub color: usize,
    /// Top-left pixel of the bounding box.
    pub y: usize,
    pub x: usize,
    pub extent: usize,
}

impl SceneObject {
    pub fn at_cell(shape: usize, color: usize, cell: (usize, usize)) -> Self {
        Self { shape, color, y: cell.0 * CELL + 1, x: cell.1 * CELL + 1, extent: EXTENT }
    }

    /// Grid cell holding the object's centre.
    pub fn cell(&self) -> (usize, usize) {
        ((self.y + self.extent / 2) / CELL, (self.x + self.extent / 2) / CELL)
    }

    fn covers(&self, py: usize, px: usize) -> bool {
        if py < self.y || px < self.x || py >= self.y + self.extent || px >= self.x + self.extent {
            return false;
        }
        let (dy, dx, e) = ((py - self.y) as f64 + 0.5, (px - self.x) as f64 + 0.5, self.extent as f64);
        let third = e / 3.0;
        let mid = |v: f64| (v - e / 2.0).abs() < third / 2.0 + 0.5;
        match self.shape {
            0 => true,
            1 => mid(dy) || mid(dx),
            2 => mid(dy),
            _ => mid(dx),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub background: [f64; 3],
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn new(objects: Vec<SceneObject>) -> Self {
        Self { background: [0.0; 3], objects }
    }

    /// Later objects paint over earlier ones. Values are rounded to f32 so
    /// the image survives a SOMT round trip unchanged.
    pub fn render(&self) -> Image {
        let mut img = Image::filled(SIDE, SIDE, 3, 0.0);
        for y in 0..SIDE {
            for x in 0..SIDE {
                let rgb = self.objects.iter().rev().find(|o| o.covers(y, x)).map_or(self.background, |o| RGB[o.color]);
                for (c, v) in rgb.iter().enumerate() {
                    img.set(y, x, c, Precision::F32.round(*v));
                }
            }
        }
        img
    }

    /// Row-major index of the patch holding cell (row, col), for a patch grid
    /// aligned with the cell grid.
    pub fn cell_index(cell: (usize, usize)) -> usize {
        cell.0 * GRID + cell.1
    }
}

/// `n` distinct grid cells.
pub fn random_cells(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    let mut all: Vec<(usize, usize)> = (0..GRID).flat_map(|r| (0..GRID).map(move |c| (r, c))).collect();
    all.shuffle(rng);
    all.truncate(n);
    all
}

/// `n` distinct values below `bound`.
pub fn distinct(rng: &mut ChaCha8Rng, bound: usize, n: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, bound, n).into_vec()
}

pub fn coin(rng: &mut ChaCha8Rng) -> bool {
    rng.random_bool(0.5)
}
