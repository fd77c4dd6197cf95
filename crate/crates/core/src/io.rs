//! Binary and JSON file formats.
//!
//! Tensor file (`PMT1`), little-endian:
//!
//! ```text
//! magic  "PMT1"          4 bytes
//! dtype  u8              1 = f32, 2 = u16, 3 = u8
//! ndim   u8
//! dims   u32 × ndim
//! data   row-major payload, product(dims) elements
//! ```
//!
//! Splat file (`PSW1`): magic, then `G, N, H, W` as u32, then records of
//! `(splat u32, view u16, pixel u32, weight f32)` until end of file.
//!
//! Label maps, class scores, and label fields carry a JSON sidecar next to
//! the tensor, at the same path with a `.json` extension.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyframe::FrameDescriptors;
use crate::mask::{ClassTable, PanopticMap, SoftMaskSet, VOID_INSTANCE};
use crate::qubo::QuboInstance;
use crate::uplift::{SplatLabelField, SplatRecord, SplatWeightTable};

pub const TENSOR_MAGIC: &[u8; 4] = b"PMT1";
pub const SPLAT_MAGIC: &[u8; 4] = b"PSW1";
const SPLAT_RECORD_BYTES: usize = 14;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U16(Vec<u16>),
    U8(Vec<u8>),
}

impl TensorData {
    fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::U16(_) => 2,
            TensorData::U8(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U16(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<u32>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::shape(format!("{} dimensions", dims.len())));
        }
        let numel = dims.iter().map(|&d| d as usize).product::<usize>();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "tensor dims {dims:?} hold {numel} elements but payload has {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_f32(self, what: &str) -> Result<Vec<f32>> {
        match self.data {
            TensorData::F32(v) => Ok(v),
            _ => Err(Error::format(format!("{what}: expected an f32 tensor"))),
        }
    }

    pub fn into_u16(self, what: &str) -> Result<Vec<u16>> {
        match self.data {
            TensorData::U16(v) => Ok(v),
            _ => Err(Error::format(format!("{what}: expected a u16 tensor"))),
        }
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(6 + 4 * self.dims.len() + 4 * self.data.len());
        buf.extend_from_slice(TENSOR_MAGIC);
        buf.push(self.data.code());
        buf.push(self.dims.len() as u8);
        for d in &self.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::U16(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => buf.extend_from_slice(v),
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        if cur.take(4, "magic")? != TENSOR_MAGIC {
            return Err(Error::format("not a PMT1 tensor file (bad magic)"));
        }
        let code = cur.take(1, "dtype")?[0];
        let ndim = cur.take(1, "ndim")?[0] as usize;
        let dims = (0..ndim).map(|_| cur.u32("dims")).collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| Error::format("tensor dims overflow"))?;
        let width = match code {
            1 => 4,
            2 => 2,
            3 => 1,
            other => return Err(Error::format(format!("unknown dtype code {other}"))),
        };
        let expected = numel
            .checked_mul(width)
            .ok_or_else(|| Error::format("tensor payload size overflow"))?;
        if cur.remaining() != expected {
            return Err(Error::format(format!(
                "payload is {} bytes, dims {dims:?} need {expected}",
                cur.remaining()
            )));
        }
        let payload = cur.take(expected, "payload")?;
        let data = match code {
            1 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            2 => TensorData::U16(
                payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            _ => TensorData::U8(payload.to_vec()),
        };
        Tensor::new(dims, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = fs::File::create(path)?;
        self.write_to(&mut file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(format!("truncated file while reading {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Path of the JSON sidecar belonging to a tensor file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassTableJson {
    pub names: Vec<String>,
    pub is_thing: Vec<bool>,
}

impl From<&ClassTable> for ClassTableJson {
    fn from(t: &ClassTable) -> Self {
        Self {
            names: t.names().to_vec(),
            is_thing: t.thing_flags().to_vec(),
        }
    }
}

impl ClassTableJson {
    pub fn to_table(&self) -> Result<ClassTable> {
        ClassTable::new(self.names.clone(), self.is_thing.clone())
    }
}

/// Sidecar of label maps and label fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSidecar {
    pub instance_to_class: BTreeMap<u16, u16>,
    pub class_table: ClassTableJson,
    pub void_id: u16,
}

/// Sidecar of class score tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSidecar {
    pub class_table: ClassTableJson,
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn dim(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::TooLarge(format!("{what} = {value}")))
}

/// Label map encoded as tensor bytes plus sidecar bytes.
pub fn encode_panoptic(map: &PanopticMap, classes: &ClassTable) -> Result<(Vec<u8>, Vec<u8>)> {
    let tensor = Tensor::new(
        vec![
            dim(map.num_views(), "views")?,
            dim(map.height(), "height")?,
            dim(map.width(), "width")?,
        ],
        TensorData::U16(map.instance_ids().to_vec()),
    )?;
    let sidecar = LabelSidecar {
        instance_to_class: map.instance_to_class().clone(),
        class_table: classes.into(),
        void_id: VOID_INSTANCE,
    };
    Ok((tensor.to_bytes(), json_bytes(&sidecar)?))
}

pub fn decode_panoptic(tensor: &[u8], sidecar: &[u8]) -> Result<(PanopticMap, ClassTable)> {
    let t = Tensor::from_bytes(tensor)?;
    let dims = t.dims().to_vec();
    if dims.len() != 3 {
        return Err(Error::format(format!(
            "label map must be 3-D (N, H, W), got dims {dims:?}"
        )));
    }
    let ids = t.into_u16("label map")?;
    let side: LabelSidecar = serde_json::from_slice(sidecar)?;
    if side.void_id != VOID_INSTANCE {
        return Err(Error::format(format!("void_id must be 0, got {}", side.void_id)));
    }
    let classes = side.class_table.to_table()?;
    let map = PanopticMap::new(
        dims[0] as usize,
        dims[1] as usize,
        dims[2] as usize,
        ids,
        side.instance_to_class,
    )?;
    Ok((map, classes))
}

pub fn write_panoptic(path: &Path, map: &PanopticMap, classes: &ClassTable) -> Result<()> {
    let (tensor, sidecar) = encode_panoptic(map, classes)?;
    fs::write(path, tensor)?;
    fs::write(sidecar_path(path), sidecar)?;
    Ok(())
}

pub fn read_panoptic(path: &Path) -> Result<(PanopticMap, ClassTable)> {
    decode_panoptic(&fs::read(path)?, &fs::read(sidecar_path(path))?)
}

/// Writes mask values (`m × N × H × W`) and class scores (`m × C` plus
/// class-table sidecar) as two tensor files.
pub fn write_proposals(masks_path: &Path, classes_path: &Path, masks: &SoftMaskSet) -> Result<()> {
    let dims = vec![
        dim(masks.num_queries(), "queries")?,
        dim(masks.num_views(), "views")?,
        dim(masks.height(), "height")?,
        dim(masks.width(), "width")?,
    ];
    Tensor::new(dims, TensorData::F32(masks.values().to_vec()))?.save(masks_path)?;
    let probs = Tensor::new(
        vec![
            dim(masks.num_queries(), "queries")?,
            dim(masks.classes().len(), "classes")?,
        ],
        TensorData::F32(masks.class_probs().to_vec()),
    )?;
    probs.save(classes_path)?;
    let side = ClassSidecar {
        class_table: masks.classes().into(),
    };
    fs::write(sidecar_path(classes_path), json_bytes(&side)?)?;
    Ok(())
}

pub fn read_proposals(masks_path: &Path, classes_path: &Path) -> Result<SoftMaskSet> {
    let masks = Tensor::load(masks_path)?;
    let mdims = masks.dims().to_vec();
    if mdims.len() != 4 {
        return Err(Error::shape(format!(
            "mask tensor must be 4-D (m, N, H, W), got dims {mdims:?}"
        )));
    }
    let probs = Tensor::load(classes_path)?;
    let pdims = probs.dims().to_vec();
    if pdims.len() != 2 {
        return Err(Error::shape(format!(
            "class tensor must be 2-D (m, C), got dims {pdims:?}"
        )));
    }
    let side: ClassSidecar = serde_json::from_slice(&fs::read(sidecar_path(classes_path))?)?;
    let table = side.class_table.to_table()?;
    if pdims[0] != mdims[0] {
        return Err(Error::shape(format!(
            "query dimension m differs: masks have {} queries, class scores have {}",
            mdims[0], pdims[0]
        )));
    }
    if pdims[1] as usize != table.len() {
        return Err(Error::shape(format!(
            "class dimension C differs: class scores have {} columns, class table has {} classes",
            pdims[1],
            table.len()
        )));
    }
    SoftMaskSet::new(
        mdims[0] as usize,
        mdims[1] as usize,
        mdims[2] as usize,
        mdims[3] as usize,
        masks.into_f32("masks")?,
        probs.into_f32("class scores")?,
        table,
    )
}

pub fn encode_splats(table: &SplatWeightTable) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + SPLAT_RECORD_BYTES * table.records().len());
    out.extend_from_slice(SPLAT_MAGIC);
    for (v, what) in [
        (table.num_splats(), "splats"),
        (table.num_views(), "views"),
        (table.height(), "height"),
        (table.width(), "width"),
    ] {
        out.extend_from_slice(&dim(v, what)?.to_le_bytes());
    }
    for r in table.records() {
        out.extend_from_slice(&r.splat.to_le_bytes());
        out.extend_from_slice(&r.view.to_le_bytes());
        out.extend_from_slice(&r.pixel.to_le_bytes());
        out.extend_from_slice(&r.weight.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_splats(bytes: &[u8]) -> Result<SplatWeightTable> {
    let mut cur = Cursor::new(bytes);
    if cur.take(4, "magic")? != SPLAT_MAGIC {
        return Err(Error::format("not a PSW1 splat file (bad magic)"));
    }
    let g = cur.u32("splat count")? as usize;
    let n = cur.u32("view count")? as usize;
    let h = cur.u32("height")? as usize;
    let w = cur.u32("width")? as usize;
    if n > u16::MAX as usize + 1 {
        return Err(Error::format(format!("{n} views do not fit 16-bit view indices")));
    }
    if !cur.remaining().is_multiple_of(SPLAT_RECORD_BYTES) {
        return Err(Error::format(format!(
            "record stream of {} bytes is not a multiple of {SPLAT_RECORD_BYTES}",
            cur.remaining()
        )));
    }
    let records = cur.bytes[cur.pos..]
        .chunks_exact(SPLAT_RECORD_BYTES)
        .map(|c| SplatRecord {
            splat: u32::from_le_bytes(c[0..4].try_into().unwrap()),
            view: u16::from_le_bytes(c[4..6].try_into().unwrap()),
            pixel: u32::from_le_bytes(c[6..10].try_into().unwrap()),
            weight: f32::from_le_bytes(c[10..14].try_into().unwrap()),
        })
        .collect();
    SplatWeightTable::new(g, n, h, w, records)
}

pub fn write_splats(path: &Path, table: &SplatWeightTable) -> Result<()> {
    fs::write(path, encode_splats(table)?)?;
    Ok(())
}

pub fn read_splats(path: &Path) -> Result<SplatWeightTable> {
    decode_splats(&fs::read(path)?)
}

/// Label field as an f32 `G × L` tensor with the uplifted map's sidecar.
pub fn write_field(path: &Path, field: &SplatLabelField, source: &LabelSidecar) -> Result<()> {
    let values = field.to_dense().into_iter().map(|v| v as f32).collect();
    let dims = vec![dim(field.num_splats(), "splats")?, dim(field.num_labels(), "labels")?];
    Tensor::new(dims, TensorData::F32(values))?.save(path)?;
    fs::write(sidecar_path(path), json_bytes(source)?)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(SplatLabelField, LabelSidecar)> {
    let t = Tensor::load(path)?;
    let dims = t.dims().to_vec();
    if dims.len() != 2 {
        return Err(Error::format(format!(
            "label field must be 2-D (G, L), got dims {dims:?}"
        )));
    }
    let values = t.into_f32("label field")?.into_iter().map(f64::from).collect();
    let field = SplatLabelField::from_dense(dims[0] as usize, dims[1] as usize, values)?;
    let side: LabelSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    Ok((field, side))
}

pub fn read_descriptors(path: &Path) -> Result<FrameDescriptors> {
    let t = Tensor::load(path)?;
    let dims = t.dims().to_vec();
    if dims.len() != 2 {
        return Err(Error::shape(format!(
            "descriptors must be 2-D (N, dim), got dims {dims:?}"
        )));
    }
    let values = t.into_f32("descriptors")?.into_iter().map(f64::from).collect();
    FrameDescriptors::new(dims[0] as usize, dims[1] as usize, values)
}

pub fn write_descriptors(path: &Path, num_frames: usize, dim_: usize, values: &[f32]) -> Result<()> {
    Tensor::new(
        vec![dim(num_frames, "frames")?, dim(dim_, "dim")?],
        TensorData::F32(values.to_vec()),
    )?
    .save(path)
}

/// QUBO instance as JSON: `{"penalty": 2.0, "linear": [..], "quadratic": [[..], ..]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuboJson {
    pub penalty: f64,
    pub linear: Vec<f64>,
    pub quadratic: Vec<Vec<f64>>,
}

impl QuboJson {
    pub fn from_instance(q: &QuboInstance) -> Self {
        let m = q.num_variables();
        Self {
            penalty: q.penalty(),
            linear: q.linear().to_vec(),
            quadratic: q.quadratic().chunks(m.max(1)).take(m).map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn to_instance(&self) -> Result<QuboInstance> {
        let m = self.linear.len();
        if self.quadratic.len() != m || self.quadratic.iter().any(|r| r.len() != m) {
            return Err(Error::shape(format!("quadratic matrix must be {m}x{m}")));
        }
        QuboInstance::new(self.linear.clone(), self.quadratic.concat(), self.penalty)
    }
}

pub fn read_qubo(path: &Path) -> Result<QuboInstance> {
    let parsed: QuboJson = serde_json::from_slice(&fs::read(path)?)?;
    parsed.to_instance()
}

pub fn write_qubo(path: &Path, q: &QuboInstance) -> Result<()> {
    fs::write(path, json_bytes(&QuboJson::from_instance(q))?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_layout_is_exact() {
        let t = Tensor::new(vec![2], TensorData::U16(vec![1, 0x0203])).unwrap();
        assert_eq!(t.to_bytes(), b"PMT1\x02\x01\x02\x00\x00\x00\x01\x00\x03\x02");
        let f = Tensor::new(vec![1, 1], TensorData::F32(vec![1.0])).unwrap();
        assert_eq!(
            f.to_bytes(),
            [
                b"PMT1".as_slice(),
                &[1, 2, 1, 0, 0, 0, 1, 0, 0, 0],
                &1.0f32.to_le_bytes()
            ]
            .concat()
        );
    }

    #[test]
    fn tensor_errors() {
        assert!(Tensor::new(vec![3], TensorData::U8(vec![1, 2])).is_err());
        let good = Tensor::new(vec![2], TensorData::U8(vec![1, 2])).unwrap().to_bytes();
        assert!(matches!(
            Tensor::from_bytes(&good[..good.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(Tensor::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(Tensor::from_bytes(&bad), Err(Error::Format(_))));
        let mut long = good;
        long.push(0);
        assert!(Tensor::from_bytes(&long).is_err());
    }

    #[test]
    fn splat_layout_is_exact() {
        let table = SplatWeightTable::new(
            2,
            1,
            1,
            2,
            vec![SplatRecord {
                splat: 1,
                view: 0,
                pixel: 1,
                weight: 0.5,
            }],
        )
        .unwrap();
        let bytes = encode_splats(&table).unwrap();
        assert_eq!(bytes.len(), 4 + 16 + 14);
        assert_eq!(&bytes[..8], b"PSW1\x02\x00\x00\x00");
        assert_eq!(decode_splats(&bytes).unwrap(), table);
        assert!(decode_splats(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn sidecar_must_use_void_zero() {
        let classes = ClassTable::new(vec!["a".into()], vec![true]).unwrap();
        let map = PanopticMap::new(1, 1, 1, vec![1], BTreeMap::from([(1, 0)])).unwrap();
        let (t, s) = encode_panoptic(&map, &classes).unwrap();
        let text = String::from_utf8(s)
            .unwrap()
            .replace("\"void_id\": 0", "\"void_id\": 5");
        assert!(decode_panoptic(&t, text.as_bytes()).is_err());
    }

    #[test]
    fn qubo_json_round_trip() {
        let q = QuboInstance::new(vec![1.0, 2.0], vec![0.0, 0.5, 0.5, 0.0], 2.0).unwrap();
        let back = QuboJson::from_instance(&q).to_instance().unwrap();
        assert_eq!(back, q);
        let bad = QuboJson {
            penalty: 2.0,
            linear: vec![1.0],
            quadratic: vec![vec![0.0, 1.0]],
        };
        assert!(bad.to_instance().is_err());
    }

    use proptest::prelude::*;

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        prop::collection::vec(0u32..5, 0..4).prop_flat_map(|dims| {
            let len = dims.iter().product::<u32>() as usize;
            let data = prop_oneof![
                prop::collection::vec(any::<f32>().prop_filter("nan", |v| !v.is_nan()), len).prop_map(TensorData::F32),
                prop::collection::vec(any::<u16>(), len).prop_map(TensorData::U16),
                prop::collection::vec(any::<u8>(), len).prop_map(TensorData::U8),
            ];
            data.prop_map(move |d| Tensor::new(dims.clone(), d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn tensor_bytes_round_trip(t in arb_tensor()) {
            let bytes = t.to_bytes();
            let back = Tensor::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back, t);
        }

        #[test]
        fn splat_bytes_round_trip(weights in prop::collection::vec(0.0f32..10.0, 0..12)) {
            let records = weights
                .iter()
                .enumerate()
                .map(|(i, &w)| SplatRecord { splat: (i % 3) as u32, view: (i / 3 % 2) as u16, pixel: (i / 6) as u32, weight: w })
                .collect();
            let table = SplatWeightTable::new(3, 2, 1, 2, records).unwrap();
            let bytes = encode_splats(&table).unwrap();
            prop_assert_eq!(encode_splats(&decode_splats(&bytes).unwrap()).unwrap(), bytes);
        }
    }
}
