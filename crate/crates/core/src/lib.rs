pub mod cuts_encoder;
pub mod gradcheck;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod thermio;
pub mod unet_decoder;

pub use cuts_encoder::{CutsEncoder, EmbeddingMap, EncoderConfig};
pub use scalar::{DType, Real};
pub use tensor::{Graph, ParamSet, Tensor, TensorError, Var};
pub use unet_decoder::{DecoderConfig, Task, UNet};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Encoder32 = CutsEncoder<f32>;
pub type Encoder64 = CutsEncoder<f64>;
pub type UNet32 = UNet<f32>;
pub type UNet64 = UNet<f64>;
