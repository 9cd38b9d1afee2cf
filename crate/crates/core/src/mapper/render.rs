use image::{Rgb, RgbImage};

use super::{category_channel, Frame, SemanticMap, FREE, OBSTACLE};

const UNKNOWN: [u8; 3] = [200, 200, 200];
const FREE_COLOUR: [u8; 3] = [255, 255, 255];
const OBSTACLE_COLOUR: [u8; 3] = [0, 0, 0];
const AGENT_COLOUR: [u8; 3] = [220, 30, 30];

#[derive(Clone, Debug)]
pub struct Palette {
    /// Colour per category, index 0 = category 1. Cycled when too short.
    pub categories: Vec<[u8; 3]>,
    /// Pixels per map cell.
    pub scale: u32,
}

impl Default for Palette {
    fn default() -> Self {
        Palette {
            categories: vec![
                [31, 119, 180],
                [255, 127, 14],
                [44, 160, 44],
                [148, 103, 189],
                [140, 86, 75],
                [227, 119, 194],
                [23, 190, 207],
                [188, 189, 34],
            ],
            scale: 8,
        }
    }
}

impl Palette {
    fn category(&self, cat: u8) -> [u8; 3] {
        self.categories[(cat as usize - 1) % self.categories.len()]
    }
}

/// Rasterises a map: obstacles black, then categories, then free space white,
/// unknown light grey. Egocentric maps get an upward agent arrow in the centre.
pub fn render_map(map: &SemanticMap, palette: &Palette) -> RgbImage {
    let s = palette.scale.max(1);
    let n = map.size() as u32;
    let mut img = RgbImage::from_pixel(n * s, n * s, Rgb(UNKNOWN));
    for row in 0..map.size() {
        for col in 0..map.size() {
            let colour = if map.get(OBSTACLE, row, col) {
                Some(OBSTACLE_COLOUR)
            } else if let Some(cat) =
                (1..=map.num_categories() as u8).find(|&c| map.get(category_channel(c), row, col))
            {
                Some(palette.category(cat))
            } else if map.get(FREE, row, col) {
                Some(FREE_COLOUR)
            } else {
                None
            };
            if let Some(c) = colour {
                fill_block(&mut img, col as u32 * s, row as u32 * s, s, c);
            }
        }
    }
    if map.frame() == Frame::Egocentric {
        draw_arrow(&mut img, (map.size() / 2) as u32 * s, (map.size() / 2) as u32 * s, s);
    }
    img
}

fn fill_block(img: &mut RgbImage, x0: u32, y0: u32, s: u32, colour: [u8; 3]) {
    for y in y0..y0 + s {
        for x in x0..x0 + s {
            img.put_pixel(x, y, Rgb(colour));
        }
    }
}

/// Upward-pointing triangle inscribed in the cell block.
fn draw_arrow(img: &mut RgbImage, x0: u32, y0: u32, s: u32) {
    let centre = (s as f64 - 1.0) / 2.0;
    for dy in 0..s {
        let half_width = (dy as f64 + 1.0) / s as f64 * centre;
        for dx in 0..s {
            if (dx as f64 - centre).abs() <= half_width {
                img.put_pixel(x0 + dx, y0 + dy, Rgb(AGENT_COLOUR));
            }
        }
    }
}
