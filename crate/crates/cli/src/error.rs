//! Exit-code taxonomy.

use std::fmt;

use thermolat::cuts_encoder::EncoderError;
use thermolat::pipeline::PipelineError;
use thermolat::tensor::checkpoint::CheckpointError;
use thermolat::thermio::ThermioError;
use thermolat::unet_decoder::DecoderError;
use thermolat::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    ConfigError,
    DataError,
    NumericError,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::ConfigError => 2,
            ErrorClass::DataError => 3,
            ErrorClass::NumericError => 4,
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::ConfigError,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::DataError,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::NumericError,
            message: message.into(),
        }
    }

    /// `error[<Class>]: <message>` on a single line.
    pub fn line(&self) -> String {
        let msg: String = self
            .message
            .chars()
            .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        format!("error[{}]: {}", self.class, msg)
    }
}

fn tensor_class(e: &TensorError) -> ErrorClass {
    match e {
        TensorError::NonFinite(_) => ErrorClass::NumericError,
        _ => ErrorClass::DataError,
    }
}

fn thermio_class(e: &ThermioError) -> ErrorClass {
    match e {
        ThermioError::InvalidConfig(_) | ThermioError::InvalidRange { .. } => ErrorClass::ConfigError,
        _ => ErrorClass::DataError,
    }
}

fn encoder_class(e: &EncoderError) -> ErrorClass {
    match e {
        EncoderError::InvalidConfig(_) => ErrorClass::ConfigError,
        EncoderError::NonFiniteActivation(_) | EncoderError::NonFiniteLoss { .. } | EncoderError::NonUnitInput { .. } => {
            ErrorClass::NumericError
        }
        EncoderError::Tensor(t) => tensor_class(t),
        _ => ErrorClass::DataError,
    }
}

fn decoder_class(e: &DecoderError) -> ErrorClass {
    match e {
        DecoderError::InvalidConfig(_) => ErrorClass::ConfigError,
        DecoderError::NonFiniteActivation(_) | DecoderError::NonFiniteLoss { .. } => ErrorClass::NumericError,
        DecoderError::Encoder(e) => encoder_class(e),
        DecoderError::Tensor(t) => tensor_class(t),
        _ => ErrorClass::DataError,
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let class = match &e {
            PipelineError::Config(_) => ErrorClass::ConfigError,
            PipelineError::Data(d) => thermio_class(d),
            PipelineError::Encoder(x) => encoder_class(x),
            PipelineError::Decoder(x) => decoder_class(x),
            _ => ErrorClass::DataError,
        };
        Self {
            class,
            message: e.to_string(),
        }
    }
}

macro_rules! via_pipeline {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                PipelineError::from(e).into()
            }
        }
    )*};
}

via_pipeline!(ThermioError, EncoderError, DecoderError, CheckpointError);

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        Self {
            class: tensor_class(&e),
            message: e.to_string(),
        }
    }
}
