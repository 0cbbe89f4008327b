//! JSON manifest plus raw little-endian weight/bias blobs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    validate_model, ConvLayerSpec, DenseLayerSpec, Layer, Model, PoolLayerSpec, QuantParams,
    Requant, TensorShape,
};
use crate::binio::{read_file, write_file};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    name: String,
    num_classes: usize,
    layers: Vec<ManifestLayer>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
enum ManifestLayer {
    #[serde(rename = "conv2d")]
    Conv2d {
        in_shape: Vec<usize>,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride_h: usize,
        stride_w: usize,
        pad_top: usize,
        pad_left: usize,
        pad_bottom: usize,
        pad_right: usize,
        in_quant: QuantParams,
        out_quant: QuantParams,
        weight_scale: f64,
        requant: Requant,
        act_min: i8,
        act_max: i8,
        weights_file: String,
        bias_file: String,
    },
    #[serde(rename = "maxpool")]
    MaxPool {
        in_shape: Vec<usize>,
        pool_h: usize,
        pool_w: usize,
        stride_h: usize,
        stride_w: usize,
    },
    #[serde(rename = "dense")]
    Dense {
        in_shape: Vec<usize>,
        out_features: usize,
        in_quant: QuantParams,
        out_quant: QuantParams,
        weight_scale: f64,
        requant: Requant,
        act_min: i8,
        act_max: i8,
        weights_file: String,
        bias_file: String,
    },
}

/// Loads and validates a model manifest. Blob paths resolve relative to the manifest.
pub fn load_model(manifest_path: impl AsRef<Path>) -> Result<Model> {
    let path = manifest_path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (idx, ml) in manifest.layers.into_iter().enumerate() {
        layers.push(match ml {
            ManifestLayer::Conv2d {
                in_shape,
                out_channels,
                kernel_h,
                kernel_w,
                stride_h,
                stride_w,
                pad_top,
                pad_left,
                pad_bottom,
                pad_right,
                in_quant,
                out_quant,
                weight_scale,
                requant,
                act_min,
                act_max,
                weights_file,
                bias_file,
            } => {
                let cin = in_shape.get(2).copied().unwrap_or(0);
                let weights = read_i8_blob(&base, idx, &weights_file, out_channels * kernel_h * kernel_w * cin)?;
                let bias = read_i32_blob(&base, idx, &bias_file, out_channels)?;
                Layer::Conv2d(ConvLayerSpec {
                    in_shape: TensorShape::new(in_shape),
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride_h,
                    stride_w,
                    pad_top,
                    pad_left,
                    pad_bottom,
                    pad_right,
                    weights,
                    bias,
                    in_quant,
                    out_quant,
                    weight_scale,
                    requant,
                    act_min,
                    act_max,
                })
            }
            ManifestLayer::MaxPool {
                in_shape,
                pool_h,
                pool_w,
                stride_h,
                stride_w,
            } => Layer::MaxPool(PoolLayerSpec {
                in_shape: TensorShape::new(in_shape),
                pool_h,
                pool_w,
                stride_h,
                stride_w,
            }),
            ManifestLayer::Dense {
                in_shape,
                out_features,
                in_quant,
                out_quant,
                weight_scale,
                requant,
                act_min,
                act_max,
                weights_file,
                bias_file,
            } => {
                let in_features: usize = in_shape.iter().product();
                let weights = read_i8_blob(&base, idx, &weights_file, out_features * in_features)?;
                let bias = read_i32_blob(&base, idx, &bias_file, out_features)?;
                Layer::Dense(DenseLayerSpec {
                    in_shape: TensorShape::new(in_shape),
                    out_features,
                    weights,
                    bias,
                    in_quant,
                    out_quant,
                    weight_scale,
                    requant,
                    act_min,
                    act_max,
                })
            }
        });
    }

    for (idx, pair) in layers.windows(2).enumerate() {
        let produced = pair[0].out_shape();
        if &produced != pair[1].in_shape() {
            return Err(Error::ShapeChain {
                layer: idx,
                next: idx + 1,
                output: produced.dims().to_vec(),
                input: pair[1].in_shape().dims().to_vec(),
            });
        }
    }

    let model = Model {
        name: manifest.name,
        layers,
        num_classes: manifest.num_classes,
    };
    let violations = validate_model(&model);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    Ok(model)
}

/// Writes `model` as a manifest at `manifest_path` with blobs next to it,
/// named `<stem>_l<k>_weights.bin` / `<stem>_l<k>_bias.bin`.
pub fn save_model(model: &Model, manifest_path: impl AsRef<Path>) -> Result<()> {
    let path = manifest_path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model")
        .to_string();

    let mut layers = Vec::with_capacity(model.layers.len());
    for (idx, layer) in model.layers.iter().enumerate() {
        let wname = format!("{stem}_l{idx}_weights.bin");
        let bname = format!("{stem}_l{idx}_bias.bin");
        layers.push(match layer {
            Layer::Conv2d(c) => {
                write_blobs(&base, &wname, &bname, &c.weights, &c.bias)?;
                ManifestLayer::Conv2d {
                    in_shape: c.in_shape.dims().to_vec(),
                    out_channels: c.out_channels,
                    kernel_h: c.kernel_h,
                    kernel_w: c.kernel_w,
                    stride_h: c.stride_h,
                    stride_w: c.stride_w,
                    pad_top: c.pad_top,
                    pad_left: c.pad_left,
                    pad_bottom: c.pad_bottom,
                    pad_right: c.pad_right,
                    in_quant: c.in_quant,
                    out_quant: c.out_quant,
                    weight_scale: c.weight_scale,
                    requant: c.requant,
                    act_min: c.act_min,
                    act_max: c.act_max,
                    weights_file: wname,
                    bias_file: bname,
                }
            }
            Layer::MaxPool(p) => ManifestLayer::MaxPool {
                in_shape: p.in_shape.dims().to_vec(),
                pool_h: p.pool_h,
                pool_w: p.pool_w,
                stride_h: p.stride_h,
                stride_w: p.stride_w,
            },
            Layer::Dense(d) => {
                write_blobs(&base, &wname, &bname, &d.weights, &d.bias)?;
                ManifestLayer::Dense {
                    in_shape: d.in_shape.dims().to_vec(),
                    out_features: d.out_features,
                    in_quant: d.in_quant,
                    out_quant: d.out_quant,
                    weight_scale: d.weight_scale,
                    requant: d.requant,
                    act_min: d.act_min,
                    act_max: d.act_max,
                    weights_file: wname,
                    bias_file: bname,
                }
            }
        });
    }
    let manifest = Manifest {
        name: model.name.clone(),
        num_classes: model.num_classes,
        layers,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_blobs(base: &Path, wname: &str, bname: &str, weights: &[i8], bias: &[i32]) -> Result<()> {
    let wbytes: Vec<u8> = weights.iter().map(|&w| w as u8).collect();
    let bbytes: Vec<u8> = bias.iter().flat_map(|b| b.to_le_bytes()).collect();
    write_file(&base.join(wname), &wbytes)?;
    write_file(&base.join(bname), &bbytes)
}

fn blob_path(base: &Path, file: &str) -> PathBuf {
    base.join(file)
}

fn read_i8_blob(base: &Path, layer: usize, file: &str, expected: usize) -> Result<Vec<i8>> {
    let bytes = read_file(&blob_path(base, file))?;
    if bytes.len() != expected {
        return Err(Error::BlobLength {
            layer,
            file: file.to_string(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes.into_iter().map(|b| b as i8).collect())
}

fn read_i32_blob(base: &Path, layer: usize, file: &str, count: usize) -> Result<Vec<i32>> {
    let bytes = read_file(&blob_path(base, file))?;
    if bytes.len() != count * 4 {
        return Err(Error::BlobLength {
            layer,
            file: file.to_string(),
            expected: count * 4,
            actual: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
