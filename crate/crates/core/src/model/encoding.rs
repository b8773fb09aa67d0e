//! Activation map to token sequence: 1x1 projection, row-major flattening and
//! learned axis-split positional encodings.

use candle_core::{Tensor, D};

use super::backbone::ActivationMap;
use super::layers::Linear;
use super::params::{join, Init, ParamStore};
use crate::error::{Error, Result};

/// Learned column (`e_u`, `W_a x C_d/2`) and row (`e_v`, `H_a x C_d/2`)
/// embeddings; position `(i, j)` is encoded as `[e_u[j], e_v[i]]`.
#[derive(Clone)]
pub struct PositionalEncodingTable {
    pub e_u: Tensor,
    pub e_v: Tensor,
}

impl PositionalEncodingTable {
    pub fn new(store: &mut ParamStore, prefix: &str, height: usize, width: usize, dim: usize) -> Result<Self> {
        if !dim.is_multiple_of(2) {
            return Err(Error::Config(format!("token dim {dim} must be even")));
        }
        Ok(Self {
            e_u: store.param(&join(prefix, "col_embed"), &[width, dim / 2], Init::UnitUniform)?,
            e_v: store.param(&join(prefix, "row_embed"), &[height, dim / 2], Init::UnitUniform)?,
        })
    }

    pub fn height(&self) -> usize {
        self.e_v.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.e_u.dims()[0]
    }

    /// `(H_a * W_a) x C_d`, token `i * W_a + j` holding `[e_u[j], e_v[i]]`.
    pub fn table(&self) -> Result<Tensor> {
        let (w, half) = self.e_u.dims2()?;
        let h = self.e_v.dim(0)?;
        let cols = self.e_u.unsqueeze(0)?.broadcast_as((h, w, half))?;
        let rows = self.e_v.unsqueeze(1)?.broadcast_as((h, w, half))?;
        Ok(Tensor::cat(&[&cols, &rows], D::Minus1)?.reshape((h * w, 2 * half))?)
    }
}

/// Flattened, projected activation map ready for an encoder.
#[derive(Clone)]
pub struct TokenSequence {
    /// `B x (H_a * W_a) x C_d`, positional encoding already added.
    pub tokens: Tensor,
    /// `(H_a * W_a) x C_d`, re-added to queries and keys at every attention layer.
    pub pos: Tensor,
    pub height: usize,
    pub width: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `Z0 = flatten(proj(A)) + E_A` with row-major flattening.
pub fn prepare_sequence(map: &ActivationMap, proj: &Linear, pe: &PositionalEncodingTable) -> Result<TokenSequence> {
    let (b, c, h, w) = map.tensor.dims4()?;
    if (h, w) != (pe.height(), pe.width()) {
        return Err(Error::Config(format!(
            "activation map is {h}x{w} but the positional table is {}x{}",
            pe.height(),
            pe.width()
        )));
    }
    let flat = map.tensor.permute((0, 2, 3, 1))?.contiguous()?.reshape((b, h * w, c))?;
    let pos = pe.table()?;
    let tokens = proj.forward(&flat)?.broadcast_add(&pos)?;
    Ok(TokenSequence {
        tokens,
        pos,
        height: h,
        width: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::backbone::Branch;
    use crate::model::layers::to_f64_vec;
    use candle_core::{DType, Device};

    #[test]
    fn table_layout_is_row_major() {
        let mut s = ParamStore::new(DType::F64, 2);
        let pe = PositionalEncodingTable::new(&mut s, "pe", 2, 3, 4).unwrap();
        let table = pe.table().unwrap().to_vec2::<f64>().unwrap();
        let eu = pe.e_u.to_vec2::<f64>().unwrap();
        let ev = pe.e_v.to_vec2::<f64>().unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let row = &table[i * 3 + j];
                assert_eq!(&row[..2], &eu[j][..]);
                assert_eq!(&row[2..], &ev[i][..]);
            }
        }
    }

    #[test]
    fn sequence_shape_matches_map() {
        let mut s = ParamStore::new(DType::F32, 0);
        let proj = Linear::new(&mut s, "p", 112, 256).unwrap();
        let pe = PositionalEncodingTable::new(&mut s, "pe", 14, 14, 256).unwrap();
        let map = ActivationMap {
            branch: Branch::Position,
            tensor: Tensor::ones((1, 112, 14, 14), DType::F32, &Device::Cpu).unwrap(),
        };
        let seq = prepare_sequence(&map, &proj, &pe).unwrap();
        assert_eq!(seq.tokens.dims(), &[1, 196, 256]);
        assert_eq!(seq.len(), 196);
    }

    #[test]
    fn zero_weights_give_zero_sequence() {
        let mut s = ParamStore::new(DType::F64, 0);
        let proj = Linear::with_init(&mut s, "p", 3, 4, Init::Zeros).unwrap();
        let pe = PositionalEncodingTable::new(&mut s, "pe", 2, 2, 4).unwrap();
        s.set(
            "pe.col_embed",
            &Tensor::zeros((2, 2), DType::F64, &Device::Cpu).unwrap(),
        )
        .unwrap();
        s.set(
            "pe.row_embed",
            &Tensor::zeros((2, 2), DType::F64, &Device::Cpu).unwrap(),
        )
        .unwrap();
        let map = ActivationMap {
            branch: Branch::Orientation,
            tensor: Tensor::randn(0f64, 1.0, (1, 3, 2, 2), &Device::Cpu).unwrap(),
        };
        let seq = prepare_sequence(&map, &proj, &pe).unwrap();
        assert!(to_f64_vec(&seq.tokens).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_cell_map_is_projection_plus_encoding() {
        let mut s = ParamStore::new(DType::F64, 4);
        let proj = Linear::new(&mut s, "p", 3, 4).unwrap();
        let pe = PositionalEncodingTable::new(&mut s, "pe", 1, 1, 4).unwrap();
        let map = ActivationMap {
            branch: Branch::Position,
            tensor: Tensor::randn(0f64, 1.0, (1, 3, 1, 1), &Device::Cpu).unwrap(),
        };
        let seq = to_f64_vec(&prepare_sequence(&map, &proj, &pe).unwrap().tokens).unwrap();
        let projected = to_f64_vec(&proj.forward(&map.tensor.reshape((1, 1, 3)).unwrap()).unwrap()).unwrap();
        let mut enc = to_f64_vec(&pe.e_u).unwrap();
        enc.extend(to_f64_vec(&pe.e_v).unwrap());
        for k in 0..4 {
            assert!((seq[k] - (projected[k] + enc[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_dim_is_rejected() {
        let mut s = ParamStore::new(DType::F32, 0);
        assert!(PositionalEncodingTable::new(&mut s, "pe", 2, 2, 5).is_err());
    }
}
