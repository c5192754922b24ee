//! EVOX, the one container for every voxel artifact: a 53-byte header
//! (magic, version, dtype, dims, grid placement) followed by raw
//! little-endian values in x-fastest order. Round trips are bit-exact,
//! including f32 signed zeros.

use std::fs;
use std::path::Path;

use super::{io_err, DataError};
use crate::geometry::{BinaryVolume, VoxelGridSpec};
use crate::metrics::LabelVolume;
use crate::occupancy::{OccupancyGrid, OccupancyState};
use crate::tsdf::TsdfVolume;

const MAGIC: &[u8; 4] = b"EVOX";
const VERSION: u32 = 1;
const DTYPE_U8: u8 = 0;
const DTYPE_F32: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum VolumePayload {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeFile {
    pub spec: VoxelGridSpec,
    pub payload: VolumePayload,
}

impl VolumeFile {
    pub fn from_labels(v: &LabelVolume) -> Self {
        Self { spec: *v.spec(), payload: VolumePayload::U8(v.values().to_vec()) }
    }

    pub fn from_binary(v: &BinaryVolume) -> Self {
        let bytes = v.values().iter().map(|&b| u8::from(b)).collect();
        Self { spec: *v.spec(), payload: VolumePayload::U8(bytes) }
    }

    /// States as u8: Other=0, OccupiedIn=1, OccludedFreeIn=2.
    pub fn from_occupancy(v: &OccupancyGrid) -> Self {
        let bytes = v
            .values()
            .iter()
            .map(|s| match s {
                OccupancyState::Other => 0,
                OccupancyState::OccupiedIn => 1,
                OccupancyState::OccludedFreeIn => 2,
            })
            .collect();
        Self { spec: *v.spec(), payload: VolumePayload::U8(bytes) }
    }

    pub fn from_scalars(spec: VoxelGridSpec, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), spec.voxel_count(), "volume size mismatch");
        Self { spec, payload: VolumePayload::F32(values) }
    }

    pub fn from_tsdf(v: &TsdfVolume) -> Self {
        Self { spec: *v.spec(), payload: VolumePayload::F32(v.values().to_vec()) }
    }

    pub fn into_labels(self) -> Result<LabelVolume, DataError> {
        let VolumePayload::U8(values) = self.payload else {
            return Err(DataError::WrongPayload { expected: "a u8 label volume" });
        };
        Ok(LabelVolume::new(self.spec, values)?)
    }

    pub fn into_binary(self) -> Result<BinaryVolume, DataError> {
        let VolumePayload::U8(values) = self.payload else {
            return Err(DataError::WrongPayload { expected: "a u8 mask volume" });
        };
        if values.iter().any(|&b| b > 1) {
            return Err(DataError::WrongPayload { expected: "a 0/1 mask" });
        }
        let bools = values.iter().map(|&b| b == 1).collect();
        Ok(BinaryVolume::from_values(self.spec, bools))
    }

    pub fn into_occupancy(self) -> Result<OccupancyGrid, DataError> {
        let VolumePayload::U8(values) = self.payload else {
            return Err(DataError::WrongPayload { expected: "a u8 occupancy volume" });
        };
        let states = values
            .iter()
            .map(|&b| match b {
                0 => Ok(OccupancyState::Other),
                1 => Ok(OccupancyState::OccupiedIn),
                2 => Ok(OccupancyState::OccludedFreeIn),
                _ => Err(DataError::WrongPayload { expected: "occupancy codes 0..=2" }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(OccupancyGrid::from_values(self.spec, states))
    }

    pub fn into_scalars(self) -> Result<(VoxelGridSpec, Vec<f32>), DataError> {
        let VolumePayload::F32(values) = self.payload else {
            return Err(DataError::WrongPayload { expected: "an f32 scalar volume" });
        };
        Ok((self.spec, values))
    }
}

pub fn write_volume(path: &Path, v: &VolumeFile) -> Result<(), DataError> {
    let n = v.spec.voxel_count();
    let (dtype, payload_len) = match &v.payload {
        VolumePayload::U8(d) => (DTYPE_U8, d.len()),
        VolumePayload::F32(d) => (DTYPE_F32, d.len()),
    };
    assert_eq!(payload_len, n, "payload does not fill the grid");

    let mut out = Vec::with_capacity(53 + n * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype);
    for d in v.spec.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for o in v.spec.origin {
        out.extend_from_slice(&o.to_le_bytes());
    }
    out.extend_from_slice(&v.spec.voxel_size.to_le_bytes());
    match &v.payload {
        VolumePayload::U8(d) => out.extend_from_slice(d),
        VolumePayload::F32(d) => {
            for x in d {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_volume(path: &Path) -> Result<VolumeFile, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let whole = bytes.len();
    let mut r = Reader { path, bytes: &bytes, pos: 0 };

    if r.take(4)? != MAGIC {
        return Err(DataError::BadMagic { path: path.to_path_buf() });
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(DataError::BadVersion { path: path.to_path_buf(), got: version });
    }
    let dtype = r.take(1)?[0];
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
    }
    let mut origin = [0f64; 3];
    for o in &mut origin {
        *o = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    }
    let voxel_size = f64::from_le_bytes(r.take(8)?.try_into().unwrap());

    let spec = VoxelGridSpec::new(origin, voxel_size, dims)?;
    let n = dims[0]
        .checked_mul(dims[1])
        .and_then(|p| p.checked_mul(dims[2]))
        .filter(|&p| p <= 1 << 33)
        .ok_or_else(|| DataError::Malformed {
            path: path.to_path_buf(),
            what: format!("implausible dims {dims:?}"),
        })?;

    let payload = match dtype {
        DTYPE_U8 => VolumePayload::U8(r.take(n)?.to_vec()),
        DTYPE_F32 => {
            let raw = r.take(n * 4)?;
            VolumePayload::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        got => return Err(DataError::BadDtype { path: path.to_path_buf(), got }),
    };
    if r.pos != whole {
        return Err(DataError::Malformed {
            path: path.to_path_buf(),
            what: format!("{} trailing bytes", whole - r.pos),
        });
    }
    Ok(VolumeFile { spec, payload })
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(DataError::Truncated { path: self.path.to_path_buf() });
        };
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn small_spec() -> VoxelGridSpec {
        VoxelGridSpec::new([0.25, -1.5, 3.0], 0.05, [6, 4, 5]).unwrap()
    }

    #[test]
    fn f32_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.evox");
        let spec = small_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut values: Vec<f32> =
            (0..spec.voxel_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        values[0] = -0.0;
        values[1] = 0.0;
        write_volume(&path, &VolumeFile::from_scalars(spec, values.clone())).unwrap();
        let (back_spec, back) = read_volume(&path).unwrap().into_scalars().unwrap();
        assert_eq!(back_spec, spec);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&values));
        assert!(back[0].is_sign_negative());
    }

    #[test]
    fn label_and_mask_round_trips() {
        let dir = tempdir().unwrap();
        let spec = small_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<u8> = (0..spec.voxel_count())
            .map(|_| if rng.gen_bool(0.1) { 255 } else { rng.gen_range(0..=11) })
            .collect();
        let lv = LabelVolume::new(spec, labels).unwrap();
        let path = dir.path().join("l.evox");
        write_volume(&path, &VolumeFile::from_labels(&lv)).unwrap();
        assert_eq!(read_volume(&path).unwrap().into_labels().unwrap(), lv);

        let mask: Vec<bool> = (0..spec.voxel_count()).map(|_| rng.gen_bool(0.4)).collect();
        let bv = BinaryVolume::from_values(spec, mask);
        let path = dir.path().join("m.evox");
        write_volume(&path, &VolumeFile::from_binary(&bv)).unwrap();
        assert_eq!(read_volume(&path).unwrap().into_binary().unwrap(), bv);
    }

    #[test]
    fn occupancy_round_trip() {
        let dir = tempdir().unwrap();
        let spec = small_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let states: Vec<OccupancyState> = (0..spec.voxel_count())
            .map(|_| match rng.gen_range(0..3) {
                0 => OccupancyState::Other,
                1 => OccupancyState::OccupiedIn,
                _ => OccupancyState::OccludedFreeIn,
            })
            .collect();
        let grid = OccupancyGrid::from_values(spec, states);
        let path = dir.path().join("o.evox");
        write_volume(&path, &VolumeFile::from_occupancy(&grid)).unwrap();
        assert_eq!(read_volume(&path).unwrap().into_occupancy().unwrap(), grid);
    }

    #[test]
    fn header_size_plus_payload_is_exact_file_size() {
        let dir = tempdir().unwrap();
        let spec = VoxelGridSpec::canonical();
        let lv = LabelVolume::new_empty(spec);
        let path = dir.path().join("big.evox");
        write_volume(&path, &VolumeFile::from_labels(&lv)).unwrap();
        let size = std::fs::metadata(&path).unwrap().len();
        assert_eq!(size, 53 + 8_294_400);
    }

    #[test]
    fn corrupt_magic_version_dtype_are_distinct_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.evox");
        let spec = small_spec();
        let v = VolumeFile::from_scalars(spec, vec![0.0; spec.voxel_count()]);
        write_volume(&path, &v).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_volume(&path), Err(DataError::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4] = 9;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_volume(&path),
            Err(DataError::BadVersion { got: 9, .. })
        ));

        let mut bad = good.clone();
        bad[8] = 7;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_volume(&path), Err(DataError::BadDtype { got: 7, .. })));

        let mut bad = good.clone();
        bad.truncate(60);
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_volume(&path), Err(DataError::Truncated { .. })));

        let mut bad = good;
        bad.push(0);
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_volume(&path), Err(DataError::Malformed { .. })));
    }

    #[test]
    fn payload_type_mismatch_is_rejected() {
        let spec = small_spec();
        let v = VolumeFile::from_scalars(spec, vec![0.0; spec.voxel_count()]);
        assert!(matches!(
            v.into_labels(),
            Err(DataError::WrongPayload { .. })
        ));
    }
}
