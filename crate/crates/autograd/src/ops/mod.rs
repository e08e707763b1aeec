mod conv;
mod elementwise;
mod linalg;
mod norm;
mod resize;
mod shape;

pub use conv::conv2d_direct;
pub use elementwise::{gelu, gelu_grad, sigmoid, sum_to_shape};
pub use norm::{softmax, BatchStats};
pub use resize::{resize_bilinear, resize_planes};
