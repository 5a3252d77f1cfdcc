use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::regions::{Region, RegionKind};

/// Lower bound applied to log-radius / log-offset slots after each update.
pub const LOG_SIZE_FLOOR: f64 = -30.0;

/// Initial box offset per dimension.
pub const INIT_OFFSET: f64 = 0.4;

/// Maps node (concept) and role identifiers to trainable parameters.
///
/// All parameters live in one contiguous array: node slots first
/// (`params_per_region` each, sizes stored as logarithms), then one
/// translation vector of length `dim` per role.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    kind: RegionKind,
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    roles: Vec<String>,
    role_index: HashMap<String, usize>,
    params: Vec<f64>,
}

fn build_index(names: &[String], what: &str) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        if name.is_empty() || name.contains(['\t', '\n', '\r']) {
            return Err(Error::Config(format!("invalid {what} id {name:?}")));
        }
        if index.insert(name.clone(), i).is_some() {
            return Err(Error::Config(format!("duplicate {what} id `{name}`")));
        }
    }
    Ok(index)
}

impl EmbeddingTable {
    /// Random initialization: centers uniform in `[-1, 1]ⁿ`, radius 1 or
    /// offsets [`INIT_OFFSET`], role vectors uniform in `[-0.1, 0.1]ⁿ`.
    pub fn initialize<R: Rng>(
        kind: RegionKind,
        dim: usize,
        ids: Vec<String>,
        roles: Vec<String>,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        let index = build_index(&ids, "node")?;
        let role_index = build_index(&roles, "role")?;
        if let Some(bad) = ids.iter().find(|id| id.starts_with('@')) {
            return Err(Error::Config(format!("node id `{bad}` may not start with `@`")));
        }
        let ppr = kind.params_per_region(dim);
        let mut params = Vec::with_capacity(ids.len() * ppr + roles.len() * dim);
        for _ in 0..ids.len() {
            params.extend((0..dim).map(|_| rng.gen_range(-1.0..=1.0)));
            match kind {
                RegionKind::Ball => params.push(0.0),
                RegionKind::Box => params.extend(std::iter::repeat(INIT_OFFSET.ln()).take(dim)),
            }
        }
        for _ in 0..roles.len() {
            params.extend((0..dim).map(|_| rng.gen_range(-0.1..=0.1)));
        }
        Ok(Self {
            kind,
            dim,
            ids,
            index,
            roles,
            role_index,
            params,
        })
    }

    /// Builds a table from explicit regions (all of one kind and dimension).
    pub fn from_regions(
        entries: Vec<(String, Region)>,
        roles: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| Error::Config("table needs at least one node".into()))?;
        let (kind, dim) = (first.1.kind(), first.1.dim());
        let mut params = Vec::new();
        let mut ids = Vec::with_capacity(entries.len());
        for (id, region) in entries {
            first_compatible(kind, dim, &region)?;
            params.extend(region.raw_params());
            ids.push(id);
        }
        let mut role_names = Vec::with_capacity(roles.len());
        for (name, v) in roles {
            if v.len() != dim {
                return Err(Error::DimensionMismatch(v.len(), dim));
            }
            params.extend(v);
            role_names.push(name);
        }
        let index = build_index(&ids, "node")?;
        let role_index = build_index(&role_names, "role")?;
        Ok(Self {
            kind,
            dim,
            ids,
            index,
            roles: role_names,
            role_index,
            params,
        })
    }

    pub fn kind(&self) -> RegionKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params_per_region(&self) -> usize {
        self.kind.params_per_region(self.dim)
    }

    pub fn num_nodes(&self) -> usize {
        self.ids.len()
    }

    pub fn num_roles(&self) -> usize {
        self.roles.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn roles(&self) -> &[String] {
        &self.roles
    }

    pub fn node_index(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn role_index(&self, role: &str) -> Result<usize> {
        self.role_index
            .get(role)
            .copied()
            .ok_or_else(|| Error::UnknownRole(role.to_string()))
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offset of node `idx` in the parameter array.
    pub fn node_offset(&self, idx: usize) -> usize {
        idx * self.params_per_region()
    }

    pub fn role_offset(&self, idx: usize) -> usize {
        self.ids.len() * self.params_per_region() + idx * self.dim
    }

    pub fn region(&self, idx: usize) -> Region {
        let start = self.node_offset(idx);
        Region::from_raw(
            self.kind,
            self.dim,
            &self.params[start..start + self.params_per_region()],
        )
        .expect("slot length matches kind")
    }

    pub fn region_of(&self, id: &str) -> Result<Region> {
        Ok(self.region(self.node_index(id)?))
    }

    pub fn set_region(&mut self, idx: usize, region: &Region) -> Result<()> {
        first_compatible(self.kind, self.dim, region)?;
        let start = self.node_offset(idx);
        let len = self.params_per_region();
        self.params[start..start + len].copy_from_slice(&region.raw_params());
        Ok(())
    }

    pub fn role_vector(&self, idx: usize) -> &[f64] {
        let start = self.role_offset(idx);
        &self.params[start..start + self.dim]
    }

    /// Clamps every log-size slot at [`LOG_SIZE_FLOOR`].
    pub fn clamp_log_sizes(&mut self) {
        let (ppr, dim) = (self.params_per_region(), self.dim);
        for node in self.params[..self.ids.len() * ppr].chunks_mut(ppr) {
            for w in &mut node[dim..] {
                if *w < LOG_SIZE_FLOOR {
                    *w = LOG_SIZE_FLOOR;
                }
            }
        }
    }

    /// Serializes in the `#regd v1` text format (raw sizes, 17 significant
    /// digits).
    pub fn to_v1(&self) -> String {
        let mut out = format!(
            "#regd v1 kind={} dim={} roles={}\n",
            self.kind,
            self.dim,
            self.roles.len()
        );
        let join = |xs: &mut dyn Iterator<Item = f64>| {
            xs.map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ")
        };
        for (idx, id) in self.ids.iter().enumerate() {
            let region = self.region(idx);
            let _ = writeln!(
                out,
                "{id}\t{}\t{}",
                join(&mut region.center().iter().copied()),
                join(&mut region.sizes().into_iter())
            );
        }
        for (idx, role) in self.roles.iter().enumerate() {
            let _ = writeln!(out, "@{role}\t{}", join(&mut self.role_vector(idx).iter().copied()));
        }
        out
    }

    pub fn from_v1(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty embedding file"))?;
        let (kind, dim, num_roles) = parse_header(header)?;

        let mut entries = Vec::new();
        let mut roles = Vec::new();
        for (lineno, line) in lines {
            let lineno = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if let Some(role) = fields[0].strip_prefix('@') {
                if fields.len() != 2 {
                    return Err(Error::parse(lineno, "role line needs 2 tab-separated fields"));
                }
                roles.push((role.to_string(), parse_reals(fields[1], dim, lineno)?));
                continue;
            }
            if !roles.is_empty() {
                return Err(Error::parse(lineno, "node line after role lines"));
            }
            if fields.len() != 3 {
                return Err(Error::parse(lineno, "node line needs 3 tab-separated fields"));
            }
            let center = parse_reals(fields[1], dim, lineno)?;
            let size_len = match kind {
                RegionKind::Ball => 1,
                RegionKind::Box => dim,
            };
            let sizes = parse_reals(fields[2], size_len, lineno)?;
            if sizes.iter().any(|s| *s <= 0.0) {
                return Err(Error::parse(lineno, "sizes must be positive"));
            }
            let region = match kind {
                RegionKind::Ball => Region::ball(center, sizes[0]),
                RegionKind::Box => Region::cuboid(center, sizes),
            };
            entries.push((fields[0].to_string(), region));
        }
        if roles.len() != num_roles {
            return Err(Error::parse(
                1,
                format!("header declares {num_roles} roles, found {}", roles.len()),
            ));
        }
        let table = Self::from_regions(entries, roles)?;
        if table.kind != kind || table.dim != dim {
            return Err(Error::parse(1, "header does not match rows"));
        }
        Ok(table)
    }

    pub fn write_v1(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_v1())?;
        Ok(())
    }

    pub fn read_v1(path: &Path) -> Result<Self> {
        Self::from_v1(&std::fs::read_to_string(path)?)
    }
}

fn first_compatible(kind: RegionKind, dim: usize, region: &Region) -> Result<()> {
    if region.kind() != kind {
        return Err(Error::KindMismatch {
            expected: kind.name(),
            found: region.kind().name(),
        });
    }
    if region.dim() != dim {
        return Err(Error::DimensionMismatch(region.dim(), dim));
    }
    Ok(())
}

fn parse_header(header: &str) -> Result<(RegionKind, usize, usize)> {
    let mut parts = header.split_whitespace();
    if parts.next() != Some("#regd") || parts.next() != Some("v1") {
        return Err(Error::parse(1, "expected `#regd v1` header"));
    }
    let (mut kind, mut dim, mut roles) = (None, None, None);
    for part in parts {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::parse(1, format!("malformed header field `{part}`")))?;
        let bad = |_| Error::parse(1, format!("bad value in `{part}`"));
        match key {
            "kind" => kind = Some(value.parse::<RegionKind>().map_err(|_| Error::parse(1, "bad kind"))?),
            "dim" => dim = Some(value.parse::<usize>().map_err(bad)?),
            "roles" => roles = Some(value.parse::<usize>().map_err(bad)?),
            other => return Err(Error::parse(1, format!("unknown header field `{other}`"))),
        }
    }
    match (kind, dim, roles) {
        (Some(k), Some(d), Some(r)) if d > 0 => Ok((k, d, r)),
        _ => Err(Error::parse(1, "header needs kind, dim > 0 and roles")),
    }
}

fn parse_reals(field: &str, expect: usize, lineno: usize) -> Result<Vec<f64>> {
    let xs = field
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::parse(lineno, e.to_string()))?;
    if xs.len() != expect {
        return Err(Error::parse(
            lineno,
            format!("expected {expect} values, found {}", xs.len()),
        ));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::parse(lineno, "non-finite value"));
    }
    Ok(xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("n{i}")).collect()
    }

    #[test]
    fn initialization_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = EmbeddingTable::initialize(RegionKind::Box, 3, names(20), vec!["r".into()], &mut rng)
            .unwrap();
        assert_eq!(t.params().len(), 20 * 6 + 3);
        for i in 0..20 {
            let Region::Box(b) = t.region(i) else { panic!() };
            assert!(b.center.iter().all(|c| c.abs() <= 1.0));
            assert!(b.offsets().iter().all(|o| (o - 0.4).abs() < 1e-15));
        }
        assert!(t.role_vector(0).iter().all(|v| v.abs() <= 0.1));
        let t = EmbeddingTable::initialize(RegionKind::Ball, 2, names(3), vec![], &mut rng).unwrap();
        assert_eq!(t.region(1).sizes(), vec![1.0]);
    }

    #[test]
    fn lookup_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = EmbeddingTable::initialize(RegionKind::Ball, 2, names(3), vec![], &mut rng).unwrap();
        assert!(matches!(t.node_index("zz"), Err(Error::UnknownNode(_))));
        assert!(matches!(t.role_index("r"), Err(Error::UnknownRole(_))));
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(EmbeddingTable::initialize(RegionKind::Ball, 2, dup, vec![], &mut rng).is_err());
    }

    #[test]
    fn v1_roundtrip_is_bit_exact_on_raw_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [RegionKind::Ball, RegionKind::Box] {
            let t = EmbeddingTable::initialize(kind, 4, names(10), vec!["r1".into(), "r2".into()], &mut rng)
                .unwrap();
            let text = t.to_v1();
            assert!(text.starts_with(&format!("#regd v1 kind={kind} dim=4 roles=2\n")));
            let back = EmbeddingTable::from_v1(&text).unwrap();
            for i in 0..10 {
                let (a, b) = (t.region(i), back.region(i));
                assert_eq!(a.center(), b.center());
                for (x, y) in a.sizes().iter().zip(b.sizes()) {
                    assert!((x - y).abs() <= 1e-15 * x);
                }
            }
            assert_eq!(t.role_vector(1), back.role_vector(1));

        }
    }

    #[test]
    fn v1_rejects_malformed() {
        assert!(EmbeddingTable::from_v1("").is_err());
        assert!(EmbeddingTable::from_v1("#regd v2 kind=ball dim=1 roles=0\n").is_err());
        assert!(EmbeddingTable::from_v1("#regd v1 kind=ball dim=2 roles=0\na\t0 0\t-1\n").is_err());
        assert!(EmbeddingTable::from_v1("#regd v1 kind=ball dim=2 roles=0\na\t0\t1\n").is_err());
        assert!(EmbeddingTable::from_v1("#regd v1 kind=ball dim=1 roles=1\na\t0\t1\n").is_err());
        let ok = EmbeddingTable::from_v1("#regd v1 kind=ball dim=1 roles=1\na\t0.5\t2\n@r\t0.25\n").unwrap();
        assert_eq!(ok.region(0).param_vector(), vec![0.5, 2.0]);
        assert_eq!(ok.role_vector(0), &[0.25]);
    }

    #[test]
    fn clamps_log_sizes() {
        let mut t = EmbeddingTable::from_regions(
            vec![("a".into(), Region::ball(vec![0.0], 1.0))],
            vec![("r".into(), vec![-100.0])],
        )
        .unwrap();
        t.params_mut()[1] = -50.0;
        t.clamp_log_sizes();
        assert_eq!(t.params()[1], LOG_SIZE_FLOOR);
        assert_eq!(t.role_vector(0), &[-100.0]);
    }
}
