use std::fs;
use std::path::Path;

use maesil::volume_io::{read_nifti, read_nifti_windowed, NiftiHeader};
use maesil::Error;

struct Hdr {
    dim: [i16; 8],
    datatype: i16,
    bitpix: i16,
    pixdim: [f32; 8],
    vox_offset: f32,
    slope: f32,
    inter: f32,
    magic: [u8; 4],
    be: bool,
}

impl Hdr {
    fn new(dims: [usize; 3], datatype: i16, bitpix: i16) -> Self {
        Self {
            dim: [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1],
            datatype,
            bitpix,
            pixdim: [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            vox_offset: 352.0,
            slope: 0.0,
            inter: 0.0,
            magic: *b"n+1\0",
            be: false,
        }
    }

    fn bytes(&self) -> Vec<u8> {
        let be = self.be;
        let mut h = vec![0u8; 352];
        let mut put = |at: usize, b: &[u8]| h[at..at + b.len()].copy_from_slice(b);
        let i32b = |v: i32| if be { v.to_be_bytes() } else { v.to_le_bytes() };
        let i16b = |v: i16| if be { v.to_be_bytes() } else { v.to_le_bytes() };
        let f32b = |v: f32| if be { v.to_be_bytes() } else { v.to_le_bytes() };
        put(0, &i32b(348));
        for (i, d) in self.dim.iter().enumerate() {
            put(40 + 2 * i, &i16b(*d));
        }
        put(70, &i16b(self.datatype));
        put(72, &i16b(self.bitpix));
        for (i, p) in self.pixdim.iter().enumerate() {
            put(76 + 4 * i, &f32b(*p));
        }
        put(108, &f32b(self.vox_offset));
        put(112, &f32b(self.slope));
        put(116, &f32b(self.inter));
        put(344, &self.magic);
        h
    }
}

fn i16_payload(v: &[i16], be: bool) -> Vec<u8> {
    v.iter()
        .flat_map(|x| if be { x.to_be_bytes() } else { x.to_le_bytes() })
        .collect()
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, bytes).unwrap();
    p
}

fn window(v: f64) -> f32 {
    ((v + 1000.0) / 2000.0).clamp(0.0, 1.0) as f32
}

#[test]
fn le_and_be_decode_to_the_same_volume() {
    let dir = tempfile::tempdir().unwrap();
    let hu: Vec<i16> = (0..4 * 3 * 2).map(|i| (i * 150 - 1500) as i16).collect();
    let mut h = Hdr::new([4, 3, 2], 4, 16);
    h.pixdim[1..4].copy_from_slice(&[0.7, 0.7, 3.0]);
    let mut le = h.bytes();
    le.extend(i16_payload(&hu, false));
    h.be = true;
    let mut be = h.bytes();
    be.extend(i16_payload(&hu, true));

    let a = read_nifti(write(dir.path(), "le.nii", &le)).unwrap();
    let b = read_nifti(write(dir.path(), "be.nii", &be)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.dims(), [4, 3, 2]);
    assert!((a.spacing()[2] - 3.0).abs() < 1e-12);
    // x fastest
    for (i, &v) in hu.iter().enumerate() {
        let (x, y, z) = (i % 4, (i / 4) % 3, i / 12);
        assert_eq!(a.get(x, y, z), window(v as f64));
    }
    assert_eq!(a.source_range(), (-1500.0, 1950.0));
}

#[test]
fn header_fields_parse() {
    let mut h = Hdr::new([5, 6, 7], 4, 16);
    h.be = true;
    let parsed = NiftiHeader::parse(&h.bytes()).unwrap();
    assert_eq!(parsed.dim[1..4], [5, 6, 7]);
    assert_eq!(parsed.datatype, 4);
    assert_eq!(parsed.bitpix, 16);
    assert!(parsed.is_single_file());
}

#[test]
fn bad_magic_and_short_header() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = Hdr::new([2, 2, 2], 4, 16);
    h.magic = *b"n+2\0";
    let mut b = h.bytes();
    b.extend(i16_payload(&[0; 8], false));
    assert!(matches!(
        read_nifti(write(dir.path(), "m.nii", &b)),
        Err(Error::BadMagic(_))
    ));
    assert!(matches!(
        read_nifti(write(dir.path(), "s.nii", &b[..100])),
        Err(Error::BadMagic(_))
    ));
    let mut garbage = Hdr::new([2, 2, 2], 4, 16).bytes();
    garbage[0..4].copy_from_slice(&[1, 2, 3, 4]);
    assert!(matches!(
        read_nifti(write(dir.path(), "g.nii", &garbage)),
        Err(Error::BadMagic(_))
    ));
}

#[test]
fn truncated_payload() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = Hdr::new([4, 4, 4], 4, 16).bytes();
    b.extend(i16_payload(&[0; 63], false));
    match read_nifti(write(dir.path(), "t.nii", &b)) {
        Err(Error::TruncatedFile { expected, actual }) => {
            assert_eq!(expected, 128);
            assert_eq!(actual, 126);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn header_image_pair() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = Hdr::new([2, 2, 2], 4, 16);
    h.magic = *b"ni1\0";
    h.vox_offset = 0.0;
    let hu = [-1000i16, -500, 0, 500, 1000, 2000, -2000, 250];
    write(dir.path(), "pair.img", &i16_payload(&hu, false));
    let v = read_nifti(write(dir.path(), "pair.hdr", &h.bytes()[..348])).unwrap();
    let expect: Vec<f32> = hu.iter().map(|&x| window(x as f64)).collect();
    assert_eq!(v.data(), expect.as_slice());
}

#[test]
fn missing_image_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = Hdr::new([2, 2, 2], 4, 16);
    h.magic = *b"ni1\0";
    let r = read_nifti(write(dir.path(), "lonely.hdr", &h.bytes()[..348]));
    assert!(matches!(r, Err(Error::IoPath { .. })), "{r:?}");
}

#[test]
fn scale_slope_and_intercept_apply_before_window() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = Hdr::new([2, 1, 1], 4, 16);
    h.slope = 2.0;
    h.inter = -1024.0;
    let mut b = h.bytes();
    b.extend(i16_payload(&[512, 1012], false));
    let v = read_nifti(write(dir.path(), "s.nii", &b)).unwrap();
    assert_eq!(v.data(), &[window(0.0), window(1000.0)]);
}

#[test]
fn u8_and_f32_payloads() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = Hdr::new([3, 1, 1], 2, 8).bytes();
    b.extend([0u8, 100, 255]);
    let v = read_nifti_windowed(write(dir.path(), "u8.nii", &b), (0.0, 255.0)).unwrap();
    assert_eq!(v.data(), &[0.0, (100.0f64 / 255.0) as f32, 1.0]);

    let mut h = Hdr::new([2, 1, 1], 16, 32);
    h.be = true;
    let mut b = h.bytes();
    for x in [-250.0f32, 1e9] {
        b.extend(x.to_be_bytes());
    }
    let v = read_nifti(write(dir.path(), "f32.nii", &b)).unwrap();
    assert_eq!(v.data(), &[window(-250.0), 1.0]);
}

#[test]
fn unsupported_datatype_and_dimensionality() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = Hdr::new([2, 2, 2], 64, 64).bytes();
    b.extend([0u8; 64]);
    assert!(matches!(
        read_nifti(write(dir.path(), "f64.nii", &b)),
        Err(Error::UnsupportedDatatype(64))
    ));

    let mut h = Hdr::new([2, 2, 2], 4, 16);
    h.dim[0] = 4;
    h.dim[4] = 2;
    let mut b = h.bytes();
    b.extend(i16_payload(&[0; 16], false));
    assert!(matches!(
        read_nifti(write(dir.path(), "4d.nii", &b)),
        Err(Error::DimMismatch(_))
    ));

    let mut h = Hdr::new([2, 2, 2], 4, 16);
    h.dim[2] = 0;
    assert!(matches!(
        read_nifti(write(dir.path(), "z.nii", &h.bytes())),
        Err(Error::DimMismatch(_))
    ));
}

#[test]
fn degenerate_window_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = Hdr::new([1, 1, 1], 4, 16).bytes();
    b.extend(i16_payload(&[0], false));
    let p = write(dir.path(), "w.nii", &b);
    assert!(matches!(
        read_nifti_windowed(&p, (5.0, 5.0)),
        Err(Error::DegenerateWindow { .. })
    ));
}
