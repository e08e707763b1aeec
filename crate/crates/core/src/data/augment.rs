use ndarray::{s, Array2, Array3, ArrayView2};
use rand::Rng;

/// The eight symmetries of the square: flips and right-angle rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dihedral {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
    Transpose,
    AntiTranspose,
}

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Dihedral::Identity,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
        Dihedral::FlipH,
        Dihedral::FlipV,
        Dihedral::Transpose,
        Dihedral::AntiTranspose,
    ];

    /// Elements that keep a non-square raster's shape.
    pub const SHAPE_PRESERVING: [Dihedral; 4] =
        [Dihedral::Identity, Dihedral::Rot180, Dihedral::FlipH, Dihedral::FlipV];

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, square: bool) -> Self {
        if square {
            Self::ALL[rng.random_range(0..8)]
        } else {
            Self::SHAPE_PRESERVING[rng.random_range(0..4)]
        }
    }

    pub fn swaps_axes(self) -> bool {
        matches!(self, Dihedral::Rot90 | Dihedral::Rot270 | Dihedral::Transpose | Dihedral::AntiTranspose)
    }

    fn view<'a, T>(self, v: ArrayView2<'a, T>) -> ArrayView2<'a, T> {
        match self {
            Dihedral::Identity => v,
            Dihedral::FlipH => v.slice_move(s![.., ..;-1]),
            Dihedral::FlipV => v.slice_move(s![..;-1, ..]),
            Dihedral::Rot180 => v.slice_move(s![..;-1, ..;-1]),
            Dihedral::Transpose => v.reversed_axes(),
            // out[y][x] = in[x][w-1-y]
            Dihedral::Rot90 => v.slice_move(s![.., ..;-1]).reversed_axes(),
            // out[y][x] = in[h-1-x][y]
            Dihedral::Rot270 => v.slice_move(s![..;-1, ..]).reversed_axes(),
            Dihedral::AntiTranspose => v.slice_move(s![..;-1, ..;-1]).reversed_axes(),
        }
    }

    pub fn apply_plane<T: Clone>(self, plane: &Array2<T>) -> Array2<T> {
        self.view(plane.view()).to_owned()
    }

    /// Transform every channel of a `[C, H, W]` raster.
    pub fn apply_image(self, img: &Array3<f64>) -> Array3<f64> {
        let planes: Vec<Array2<f64>> = img.outer_iter().map(|p| self.view(p).to_owned()).collect();
        let views: Vec<_> = planes.iter().map(|p| p.view()).collect();
        ndarray::stack(ndarray::Axis(0), &views).expect("equal plane shapes")
    }
}
