//! Compile event probabilities into polynomials over scheme coordinates.
//!
//! Only blocks that hold a node consulted by some atom are enumerated.
//! Atoms whose evaluation paths share no block are independent, so their
//! groups are enumerated separately and the group polynomials multiplied.

use num_rational::BigRational;
use num_traits::One;

use crate::error::{Error, Result};
use crate::event::{Atom, Comparison, Constraint, Event};
use crate::poly::{PolynomialExpr, RationalExpr};
use crate::scheme::ResponseScheme;

/// Atom resolved to scheme indices.
#[derive(Debug, Clone)]
struct IndexedAtom {
    node: usize,
    intervention: Vec<(usize, u8)>,
    value: u8,
    /// Nodes whose response function is consulted.
    relevant: Vec<usize>,
}

fn resolve(scheme: &ResponseScheme, atom: &Atom) -> Result<IndexedAtom> {
    let idx = |n: &str| -> Result<usize> {
        if scheme.dag.is_hidden(n) {
            return Err(Error::HiddenInEvent(n.to_string()));
        }
        scheme.node_index(n).ok_or_else(|| Error::UnknownNode(n.to_string()))
    };
    let node = idx(&atom.node)?;
    let mut intervention = Vec::new();
    for (n, &v) in &atom.intervention {
        if v > 1 {
            return Err(Error::ValueOutOfDomain { node: n.clone(), value: v as i64 });
        }
        intervention.push((idx(n)?, v));
    }
    if atom.value > 1 {
        return Err(Error::ValueOutOfDomain { node: atom.node.clone(), value: atom.value as i64 });
    }
    let mut relevant = Vec::new();
    let mut seen = vec![false; scheme.nodes.len()];
    let mut stack = vec![node];
    while let Some(n) = stack.pop() {
        if seen[n] || intervention.iter().any(|(i, _)| *i == n) {
            continue;
        }
        seen[n] = true;
        relevant.push(n);
        stack.extend(scheme.parents[n].iter().copied());
    }
    relevant.sort_unstable();
    Ok(IndexedAtom { node, intervention, value: atom.value, relevant })
}

fn holds(scheme: &ResponseScheme, assignment: &[usize], atom: &IndexedAtom) -> bool {
    scheme.realize_indexed(assignment, &atom.intervention)[atom.node] == atom.value
}

/// Polynomial for the probability of a conjunction of atoms.
pub fn compile_joint(scheme: &ResponseScheme, atoms: &[Atom]) -> Result<PolynomialExpr> {
    let atoms: Vec<IndexedAtom> = atoms.iter().map(|a| resolve(scheme, a)).collect::<Result<_>>()?;
    let nb = scheme.blocks.len();

    // group atoms whose evaluation paths touch a common block
    let atom_blocks: Vec<Vec<usize>> = atoms
        .iter()
        .map(|a| {
            let mut b: Vec<usize> = a.relevant.iter().map(|&n| scheme.block_of[n]).collect();
            b.sort_unstable();
            b.dedup();
            b
        })
        .collect();
    let mut group_of_block: Vec<Option<usize>> = vec![None; nb];
    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new(); // (blocks, atoms)
    for (ai, blocks) in atom_blocks.iter().enumerate() {
        let mut hit: Vec<usize> = blocks.iter().filter_map(|&b| group_of_block[b]).collect();
        hit.sort_unstable();
        hit.dedup();
        let target = match hit.first() {
            Some(&g) => g,
            None => {
                groups.push((Vec::new(), Vec::new()));
                groups.len() - 1
            }
        };
        for &g in hit.iter().skip(1).rev() {
            let (bs, as_) = std::mem::take(&mut groups[g]);
            for &b in &bs {
                group_of_block[b] = Some(target);
            }
            groups[target].0.extend(bs);
            groups[target].1.extend(as_);
        }
        for &b in blocks {
            if group_of_block[b].is_none() {
                group_of_block[b] = Some(target);
                groups[target].0.push(b);
            }
        }
        groups[target].1.push(ai);
    }

    let mut out = PolynomialExpr::one();
    for (blocks, member_atoms) in groups.iter().filter(|(_, a)| !a.is_empty()) {
        let mut blocks = blocks.clone();
        blocks.sort_unstable();
        let group_atoms: Vec<&IndexedAtom> = member_atoms.iter().map(|&i| &atoms[i]).collect();
        let p = compile_group(scheme, &blocks, &group_atoms);
        if p.is_zero() {
            return Ok(p);
        }
        out = out.mul(&p);
    }
    Ok(out)
}

fn compile_group(scheme: &ResponseScheme, blocks: &[usize], atoms: &[&IndexedAtom]) -> PolynomialExpr {
    let mut relevant = vec![false; scheme.nodes.len()];
    for a in atoms {
        for &n in &a.relevant {
            relevant[n] = true;
        }
    }
    // per block: relevant node positions, and the coordinates matching each
    // combination of relevant response indices
    struct BlockEnum {
        rel_nodes: Vec<usize>,
        rel_counts: Vec<usize>,
        combos: usize,
        coords: Vec<Vec<u32>>,
    }
    let enums: Vec<BlockEnum> = blocks
        .iter()
        .map(|&b| {
            let blk = &scheme.blocks[b];
            let pos: Vec<usize> = (0..blk.nodes.len()).filter(|&i| relevant[blk.nodes[i]]).collect();
            let rel_counts: Vec<usize> = pos.iter().map(|&i| blk.counts[i]).collect();
            let combos: usize = rel_counts.iter().product();
            let mut coords = vec![Vec::new(); combos];
            for local in 0..blk.dim {
                let idx = blk.decode(local);
                let combo = pos.iter().fold(0, |acc, &i| acc * blk.counts[i] + idx[i]);
                coords[combo].push((blk.offset + local) as u32);
            }
            BlockEnum { rel_nodes: pos.iter().map(|&i| blk.nodes[i]).collect(), rel_counts, combos, coords }
        })
        .collect();

    let total: usize = enums.iter().map(|e| e.combos).product();
    let mut assignment = vec![0usize; scheme.nodes.len()];
    let mut out = PolynomialExpr::zero();
    let one = BigRational::one();
    for mut code in 0..total {
        let mut choice = vec![0usize; enums.len()];
        for (k, e) in enums.iter().enumerate().rev() {
            choice[k] = code % e.combos;
            code /= e.combos;
            let mut c = choice[k];
            for (j, &n) in e.rel_nodes.iter().enumerate().rev() {
                assignment[n] = c % e.rel_counts[j];
                c /= e.rel_counts[j];
            }
        }
        if !atoms.iter().all(|a| holds(scheme, &assignment, a)) {
            continue;
        }
        // cross product of matching coordinates across the group's blocks
        let lists: Vec<&Vec<u32>> = enums.iter().zip(&choice).map(|(e, &c)| &e.coords[c]).collect();
        let mut idx = vec![0usize; lists.len()];
        'outer: loop {
            let mono: Vec<u32> = lists.iter().zip(&idx).map(|(l, &i)| l[i]).collect();
            out.add_term(mono, one.clone());
            for k in (0..lists.len()).rev() {
                idx[k] += 1;
                if idx[k] < lists[k].len() {
                    continue 'outer;
                }
                idx[k] = 0;
            }
            break;
        }
    }
    out
}

/// Probability of an event; conditional events give numerator
/// `P(joint & given)` over denominator `P(given)`.
pub fn compile_probability(scheme: &ResponseScheme, event: &Event) -> Result<RationalExpr> {
    event.validate(&scheme.dag)?;
    if event.given.is_empty() {
        return Ok(RationalExpr::polynomial(compile_joint(scheme, &event.joint)?));
    }
    let mut all = event.joint.clone();
    all.extend(event.given.iter().cloned());
    let num = compile_joint(scheme, &all)?;
    let den = compile_joint(scheme, &event.given)?;
    if den.is_zero() {
        return Err(Error::InconsistentEvent(format!("condition of {event} is impossible")));
    }
    RationalExpr::new(num, den)
}

/// Compile a constraint at budget `delta` into `poly (cmp) 0`.
///
/// Conditional probabilities sharing one condition are cleared by
/// multiplying through with the condition's probability, which is
/// nonnegative and therefore keeps the comparison direction.
pub fn compile_constraint(
    scheme: &ResponseScheme,
    constraint: &Constraint,
    delta: &BigRational,
) -> Result<(PolynomialExpr, Comparison)> {
    constraint.validate(&scheme.dag)?;
    let given: Vec<Atom> = constraint.events().next().map(|e| e.given.clone()).unwrap_or_default();
    let mut poly = PolynomialExpr::zero();
    for (w, e) in &constraint.expr.terms {
        let mut atoms = e.joint.clone();
        atoms.extend(given.iter().cloned());
        poly = poly.add(&compile_joint(scheme, &atoms)?.scale(&w.at(delta)));
    }
    let base = if given.is_empty() { PolynomialExpr::one() } else { compile_joint(scheme, &given)? };
    poly = poly.add(&base.scale(&constraint.expr.constant.at(delta)));
    Ok((poly, constraint.cmp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{parse_constraint, parse_event};
    use crate::graph::{parse_edgelist, Dag};
    use crate::scalar::ratio;
    use crate::scheme::build_scheme;

    fn scheme(text: &str, hidden: &[&str]) -> ResponseScheme {
        let mut d = parse_edgelist(text).unwrap();
        d.set_hidden(hidden.iter().copied()).unwrap();
        build_scheme(&d).unwrap()
    }

    #[test]
    fn single_node() {
        let s = build_scheme(&Dag::new(["A"], Vec::new()).unwrap()).unwrap();
        let p = compile_joint(&s, &[Atom::new("A", 1)]).unwrap();
        assert_eq!(p, PolynomialExpr::variable(1));
    }

    #[test]
    fn chain_probability() {
        let s = scheme("A->Y", &[]);
        let p = compile_joint(&s, &[Atom::new("Y", 1)]).unwrap();
        // x0 = A const-0, x1 = A const-1; Y functions at 2..6 = zero, not, id, one
        let mut want = PolynomialExpr::zero();
        for (a, y) in [(0, 3), (0, 5), (1, 4), (1, 5)] {
            want.add_term(vec![a, y], ratio(1, 1));
        }
        assert_eq!(p, want);
        let mut point = vec![0.0; 6];
        point[1] = 1.0;
        point[4] = 1.0;
        assert_eq!(p.eval_f64(&point), 1.0);
    }

    #[test]
    fn independent_atoms_factorize() {
        let s = scheme("A->Y, A->P, A->Yp, Y->Yp, U->Y, U->P", &["U"]);
        let p = compile_joint(&s, &[Atom::new("A", 1)]).unwrap();
        assert_eq!(p, PolynomialExpr::variable(1));
        let q = compile_joint(&s, &[Atom::new("A", 1), Atom::new("Yp", 0)]).unwrap();
        assert!(q.respects_blocks(&s));
    }

    #[test]
    fn complement_and_partition_reduce_to_one() {
        let s = scheme("A->Y, A->P, A->S, U->P, U->Y, U->S, Y->S", &["U"]);
        let mut total = PolynomialExpr::zero();
        for a in 0..2u8 {
            for y in 0..2u8 {
                for p in 0..2u8 {
                    let atoms = [Atom::new("A", a), Atom::new("Y", y), Atom::new("P", p)];
                    total = total.add(&compile_joint(&s, &atoms).unwrap());
                }
            }
        }
        assert_eq!(total.reduce(&s), PolynomialExpr::one());
        let e = compile_joint(&s, &[Atom::new("S", 1)]).unwrap();
        let c = compile_joint(&s, &[Atom::new("S", 0)]).unwrap();
        assert_eq!(e.add(&c).reduce(&s), PolynomialExpr::one());
    }

    #[test]
    fn counterfactual_consistency() {
        let s = scheme("A->T, A->Y, A->P, T->Y, U->P, U->Y, U->T", &["U"]);
        for d in 0..2u8 {
            for y in 0..2u8 {
                let cf = compile_joint(&s, &[Atom::under("Y", &[("T", d)], y), Atom::new("T", d)]).unwrap();
                let f = compile_joint(&s, &[Atom::new("Y", y), Atom::new("T", d)]).unwrap();
                assert_eq!(cf.reduce(&s), f.reduce(&s));
            }
        }
    }

    #[test]
    fn conditional_and_constraint() {
        let s = scheme("A->Y, A->P, A->S, U->P, U->Y, U->S, Y->S", &["U"]);
        let e = parse_event("P(P=1 | A=0)", &s.dag).unwrap();
        let r = compile_probability(&s, &e).unwrap();
        assert!(!r.is_polynomial());
        let c = parse_constraint("P(S = 1) >= 1 - D", &s.dag).unwrap();
        let (poly, cmp) = compile_constraint(&s, &c, &ratio(1, 20)).unwrap();
        assert_eq!(cmp, Comparison::Ge);
        let ps = compile_joint(&s, &[Atom::new("S", 1)]).unwrap();
        assert_eq!(poly, ps.add(&PolynomialExpr::constant(ratio(-19, 20))));
        let bad = parse_event("P(Y=1 | A=0 & A=1)", &s.dag).unwrap();
        assert!(matches!(compile_probability(&s, &bad), Err(Error::InconsistentEvent(_))));
    }

    #[test]
    fn non_ancestor_intervention_is_ignored() {
        let s = scheme("A->Y, U->P, U->Y", &["U"]);
        let te = compile_joint(&s, &[Atom::under("P", &[("A", 1)], 1)])
            .unwrap()
            .sub(&compile_joint(&s, &[Atom::under("P", &[("A", 0)], 1)]).unwrap());
        assert!(te.is_zero());
    }
}
