use alloc::vec;
use alloc::vec::Vec;

use super::StatModelError;
use crate::numerics::{dot, Matrix, Rng};

/// How dictionary atoms are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictionaryKind {
    /// Independent standard-Gaussian directions, normalized.
    Gaussian,
    /// Gaussian directions orthonormalized (requires `m <= d`).
    Orthonormal,
    /// Union of mutually unbiased bases: the standard basis plus bases of
    /// signed Walsh functions twisted by bent quadratic forms. Any two atoms
    /// from different bases have `|⟨A_i, A_j⟩| = 1/√d` exactly. Requires `d`
    /// to be an even power of two.
    MutuallyUnbiased,
}

/// Unit-norm atoms and their measured coherence.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    /// One atom per row (`m x d`).
    atoms: Matrix,
    pub eps_dict_max: f64,
    pub eps_dict_mean: f64,
}

impl Dictionary {
    pub fn from_atoms(atoms: Matrix) -> Result<Self, StatModelError> {
        let atoms = crate::numerics::unit_normalize_rows(&atoms)?;
        let (eps_dict_max, eps_dict_mean) = coherence(&atoms);
        Ok(Self {
            atoms,
            eps_dict_max,
            eps_dict_mean,
        })
    }

    pub fn dim(&self) -> usize {
        self.atoms.cols()
    }

    pub fn size(&self) -> usize {
        self.atoms.rows()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        self.atoms.row(i)
    }

    /// Atoms as rows (`m x d`).
    pub fn atoms(&self) -> &Matrix {
        &self.atoms
    }

    /// The `d x m` dictionary matrix (atoms as columns).
    pub fn matrix(&self) -> Matrix {
        self.atoms.transpose()
    }
}

/// Max and mean `|⟨A_i, A_j⟩|` over `i < j`.
fn coherence(atoms: &Matrix) -> (f64, f64) {
    let m = atoms.rows();
    if m < 2 {
        return (0.0, 0.0);
    }
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let v = dot(atoms.row(i), atoms.row(j)).abs();
            max = max.max(v);
            sum += v;
        }
    }
    (max, sum / (m * (m - 1) / 2) as f64)
}

pub fn generate_dictionary(
    d: usize,
    m: usize,
    kind: DictionaryKind,
    rng: &mut Rng,
) -> Result<Dictionary, StatModelError> {
    if d == 0 || m < 2 {
        return Err(StatModelError::InvalidConfig("dictionary needs d >= 1 and m >= 2".into()));
    }
    let atoms = match kind {
        DictionaryKind::Gaussian => gaussian_atoms(d, m, rng)?,
        DictionaryKind::Orthonormal => {
            if m > d {
                return Err(StatModelError::Infeasible(alloc::format!(
                    "orthonormal dictionary needs m <= d (m={m}, d={d})"
                )));
            }
            orthonormalize(gaussian_atoms(d, m, rng)?)
        }
        DictionaryKind::MutuallyUnbiased => mutually_unbiased_atoms(d, m, rng)?,
    };
    Dictionary::from_atoms(atoms)
}

fn gaussian_atoms(d: usize, m: usize, rng: &mut Rng) -> Result<Matrix, StatModelError> {
    Ok(Matrix::from_fn(m, d, |_, _| rng.normal())?)
}

/// Thin QR of the `d x m` column matrix; the Q factor's columns become atoms.
fn orthonormalize(atoms: Matrix) -> Matrix {
    let q = atoms.transpose().to_nalgebra().qr().q();
    Matrix::from_nalgebra(&q).transpose()
}

/// Rank of a square binary matrix given as row bitmasks.
fn f2_rank(mut rows: Vec<u64>) -> usize {
    let mut rank = 0;
    let n = rows.len();
    for bit in 0..64 {
        let mask = 1u64 << bit;
        if let Some(p) = (rank..n).find(|&r| rows[r] & mask != 0) {
            rows.swap(rank, p);
            for r in 0..n {
                if r != rank && rows[r] & mask != 0 {
                    rows[r] ^= rows[rank];
                }
            }
            rank += 1;
        }
    }
    rank
}

/// Strictly upper-triangular binary matrix `S` describing the quadratic form
/// `q(x) = Σ_{i<j} S_ij x_i x_j` over `F_2^n`.
type QuadForm = Vec<u64>;

/// The polar form `S + Sᵀ` is non-singular, i.e. `q` is bent.
fn is_bent(s: &QuadForm) -> bool {
    let n = s.len();
    let polar: Vec<u64> = (0..n)
        .map(|i| {
            let mut row = s[i];
            for (j, sj) in s.iter().enumerate() {
                if sj & (1u64 << i) != 0 {
                    row |= 1u64 << j;
                }
            }
            row
        })
        .collect();
    f2_rank(polar) == n
}

fn random_form(n: usize, rng: &mut Rng) -> QuadForm {
    (0..n)
        .map(|i| {
            let mut row = 0u64;
            for j in i + 1..n {
                if rng.next_u64() & 1 == 1 {
                    row |= 1u64 << j;
                }
            }
            row
        })
        .collect()
}

fn eval_form(s: &QuadForm, x: u64) -> u32 {
    let mut acc = 0u32;
    for (i, row) in s.iter().enumerate() {
        if x & (1u64 << i) != 0 {
            acc ^= (row & x).count_ones() & 1;
        }
    }
    acc
}

const FORM_SEARCH_ATTEMPTS: usize = 100_000;

fn mutually_unbiased_atoms(d: usize, m: usize, rng: &mut Rng) -> Result<Matrix, StatModelError> {
    if !d.is_power_of_two() || !d.trailing_zeros().is_multiple_of(2) {
        return Err(StatModelError::Infeasible(alloc::format!(
            "mutually unbiased dictionary needs d = 4^j (got {d})"
        )));
    }
    let n = d.trailing_zeros() as usize;
    let bases_needed = m.div_ceil(d);
    // basis 0 is the standard basis; the remaining ones come from quadratic
    // forms whose pairwise differences are all bent (the zero form included)
    let mut forms: Vec<QuadForm> = Vec::new();
    if bases_needed > 1 {
        forms.push(vec![0; n]);
    }
    let mut attempts = 0;
    while forms.len() + 1 < bases_needed {
        attempts += 1;
        if attempts > FORM_SEARCH_ATTEMPTS {
            return Err(StatModelError::Infeasible(alloc::format!(
                "found only {} mutually unbiased bases in dimension {d}; need {bases_needed}",
                forms.len() + 1
            )));
        }
        let cand = random_form(n, rng);
        let ok = forms.iter().all(|f| {
            let diff: QuadForm = f.iter().zip(&cand).map(|(a, b)| a ^ b).collect();
            is_bent(&diff)
        });
        if ok {
            forms.push(cand);
        }
    }

    let scale = 1.0 / libm::sqrt(d as f64);
    let mut data = Vec::with_capacity(m * d);
    'outer: for basis in 0..bases_needed {
        for a in 0..d as u64 {
            if data.len() == m * d {
                break 'outer;
            }
            if basis == 0 {
                let mut e = vec![0.0; d];
                e[a as usize] = 1.0;
                data.extend(e);
            } else {
                let form = &forms[basis - 1];
                data.extend((0..d as u64).map(|x| {
                    let parity = eval_form(form, x) ^ ((a & x).count_ones() & 1);
                    if parity == 0 {
                        scale
                    } else {
                        -scale
                    }
                }));
            }
        }
    }
    Ok(Matrix::from_vec(m, d, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::norm;

    #[test]
    fn orthonormal_has_zero_coherence() {
        let mut rng = Rng::new(1);
        let dict = generate_dictionary(8, 8, DictionaryKind::Orthonormal, &mut rng).unwrap();
        assert!(dict.eps_dict_max < 1e-9);
        let g = dict.atoms().matmul(&dict.atoms().transpose()).unwrap();
        assert!(g.max_abs_diff(&Matrix::identity(8)) < 1e-9);
        assert!(generate_dictionary(4, 5, DictionaryKind::Orthonormal, &mut rng).is_err());
    }

    #[test]
    fn mutually_unbiased_coherence_is_exact() {
        let mut rng = Rng::new(2);
        for (d, m) in [(4, 12), (16, 64), (64, 256)] {
            let dict = generate_dictionary(d, m, DictionaryKind::MutuallyUnbiased, &mut rng).unwrap();
            let target = 1.0 / libm::sqrt(d as f64);
            assert!((dict.eps_dict_max - target).abs() < 1e-12, "d={d}: {}", dict.eps_dict_max);
            for i in 0..m {
                assert!((norm(dict.atom(i)) - 1.0).abs() < 1e-12);
            }
        }
        assert!(generate_dictionary(8, 16, DictionaryKind::MutuallyUnbiased, &mut rng).is_err());
    }

    #[test]
    fn seeded_generation_repeats() {
        let a = generate_dictionary(16, 40, DictionaryKind::Gaussian, &mut Rng::new(5)).unwrap();
        let b = generate_dictionary(16, 40, DictionaryKind::Gaussian, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn f2_rank_basics() {
        assert_eq!(f2_rank(vec![0b01, 0b10]), 2);
        assert_eq!(f2_rank(vec![0b11, 0b11]), 1);
        // x0 x1 is bent in two variables, the zero form is not
        assert!(is_bent(&vec![0b10, 0]));
        assert!(!is_bent(&vec![0, 0]));
    }
}
