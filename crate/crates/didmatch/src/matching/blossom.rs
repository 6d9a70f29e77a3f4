//! Maximum-weight matching in general graphs via the primal-dual blossom
//! method (augmenting-path search with blossom shrinking).
//!
//! Weights are integers; every dual quantity is kept pre-multiplied by two so
//! the algorithm stays in exact integer arithmetic throughout. With
//! `max_cardinality` the solver returns a maximum-weight matching among the
//! maximum-cardinality ones, which is how the minimum-cost perfect matching
//! wrapper in the parent module uses it (negated costs on a complete graph).
//!
//! The structure follows the well-known O(n^3) formulation popularized by
//! Galil's survey and Gabow's thesis.

pub(crate) type Weight = i64;

/// Marks "no vertex / no edge / no label-end".
pub(crate) const SENTINEL: usize = usize::MAX;

const LABEL_FREE: u8 = 0;
const LABEL_S: u8 = 1;
const LABEL_T: u8 = 2;
const BREADCRUMB: u8 = 4;

struct Solver {
    nvertex: usize,
    nedge: usize,
    max_cardinality: bool,
    edges: Vec<(usize, usize, Weight)>,
    // endpoint[p] is the vertex at edge endpoint p; endpoints 2k and 2k+1
    // belong to edge k.
    endpoint: Vec<usize>,
    // neighbend[v] lists the remote endpoints of edges attached to v.
    neighbend: Vec<Vec<usize>>,
    // mate[v] is the remote endpoint of v's matched edge (SENTINEL if single).
    mate: Vec<usize>,
    // Per top-level blossom: free / S / T; bit 4 is a DFS breadcrumb.
    label: Vec<u8>,
    // Remote endpoint of the edge through which a blossom got its label.
    labelend: Vec<usize>,
    // Top-level blossom containing each vertex.
    inblossom: Vec<usize>,
    blossomparent: Vec<usize>,
    blossomchilds: Vec<Vec<usize>>,
    // Base vertex of each blossom.
    blossombase: Vec<usize>,
    // Connecting edge endpoints between consecutive sub-blossoms.
    blossomendps: Vec<Vec<usize>>,
    // Least-slack edge bookkeeping for the dual updates.
    bestedge: Vec<usize>,
    blossombestedges: Vec<Vec<usize>>,
    unusedblossoms: Vec<usize>,
    // dualvar[v] = 2u(v) for vertices, 2z(b) for blossoms.
    dualvar: Vec<Weight>,
    allowedge: Vec<bool>,
    queue: Vec<usize>,
}

impl Solver {
    fn new(nvertex: usize, edges: Vec<(usize, usize, Weight)>, max_cardinality: bool) -> Self {
        // Work on doubled weights so that per-vertex starting duals keep all
        // duals in one parity class, which the integer delta steps rely on.
        let edges: Vec<(usize, usize, Weight)> =
            edges.into_iter().map(|(i, j, w)| (i, j, 2 * w)).collect();
        let nedge = edges.len();
        for &(i, j, _) in &edges {
            assert!(i != j && i < nvertex && j < nvertex, "bad edge ({i}, {j})");
        }
        let maxweight = edges.iter().map(|e| e.2).max().unwrap_or(0).max(0);
        let endpoint: Vec<usize> = (0..2 * nedge)
            .map(|p| if p % 2 == 0 { edges[p / 2].0 } else { edges[p / 2].1 })
            .collect();
        let mut neighbend = vec![Vec::new(); nvertex];
        for (k, &(i, j, _)) in edges.iter().enumerate() {
            neighbend[i].push(2 * k + 1);
            neighbend[j].push(2 * k);
        }
        let mut blossombase: Vec<usize> = (0..nvertex).collect();
        blossombase.extend(vec![SENTINEL; nvertex]);
        // In max-cardinality mode each vertex starts at its own largest
        // incident weight (still dual-feasible, and tight on more edges,
        // which lets the greedy warm start below skip many stages); the
        // classic uniform start is kept otherwise.
        let mut dualvar = if max_cardinality {
            let mut per_vertex = vec![0; nvertex];
            for &(i, j, w) in &edges {
                per_vertex[i] = per_vertex[i].max(w);
                per_vertex[j] = per_vertex[j].max(w);
            }
            per_vertex
        } else {
            vec![maxweight; nvertex]
        };
        dualvar.extend(vec![0; nvertex]);
        Solver {
            nvertex,
            nedge,
            max_cardinality,
            edges,
            endpoint,
            neighbend,
            mate: vec![SENTINEL; nvertex],
            label: vec![LABEL_FREE; 2 * nvertex],
            labelend: vec![SENTINEL; 2 * nvertex],
            inblossom: (0..nvertex).collect(),
            blossomparent: vec![SENTINEL; 2 * nvertex],
            blossomchilds: vec![Vec::new(); 2 * nvertex],
            blossombase,
            blossomendps: vec![Vec::new(); 2 * nvertex],
            bestedge: vec![SENTINEL; 2 * nvertex],
            blossombestedges: vec![Vec::new(); 2 * nvertex],
            unusedblossoms: (nvertex..2 * nvertex).collect(),
            dualvar,
            allowedge: vec![false; nedge],
            queue: Vec::new(),
        }
    }

    /// 2 * slack of edge k (ignores blossom duals; not valid inside blossoms).
    #[inline]
    fn slack(&self, k: usize) -> Weight {
        let (i, j, wt) = self.edges[k];
        self.dualvar[i] + self.dualvar[j] - 2 * wt
    }

    /// Leaf vertices of (possibly trivial) blossom b.
    fn blossom_leaves(&self, b: usize) -> Vec<usize> {
        let mut leaves = Vec::new();
        if b < self.nvertex {
            leaves.push(b);
        } else {
            for &child in &self.blossomchilds[b] {
                if child < self.nvertex {
                    leaves.push(child);
                } else {
                    leaves.extend(self.blossom_leaves(child));
                }
            }
        }
        leaves
    }

    /// Label the top-level blossom of w with t, reached through remote
    /// endpoint p. S-blossoms enqueue their vertices; T-blossoms immediately
    /// label their base's mate with S.
    fn assign_label(&mut self, w: usize, t: u8, p: usize) {
        let b = self.inblossom[w];
        assert!(self.label[w] == LABEL_FREE && self.label[b] == LABEL_FREE);
        self.label[w] = t;
        self.label[b] = t;
        self.labelend[w] = p;
        self.labelend[b] = p;
        self.bestedge[w] = SENTINEL;
        self.bestedge[b] = SENTINEL;
        if t == LABEL_S {
            let leaves = self.blossom_leaves(b);
            self.queue.extend(leaves);
        } else if t == LABEL_T {
            let base = self.blossombase[b];
            assert!(self.mate[base] != SENTINEL, "T-blossom base must be matched");
            let mate_endpoint = self.mate[base];
            self.assign_label(self.endpoint[mate_endpoint], LABEL_S, mate_endpoint ^ 1);
        }
    }

    /// Trace back from v and w to find either a new blossom's base vertex or
    /// (SENTINEL) an augmenting path.
    fn scan_blossom(&mut self, v: usize, w: usize) -> usize {
        let mut path = Vec::new();
        let mut base = SENTINEL;
        let mut v = v;
        let mut w = w;
        while v != SENTINEL || w != SENTINEL {
            let mut b = self.inblossom[v];
            if self.label[b] & BREADCRUMB != 0 {
                base = self.blossombase[b];
                break;
            }
            assert_eq!(self.label[b], LABEL_S);
            path.push(b);
            self.label[b] = LABEL_S | BREADCRUMB;
            assert_eq!(self.labelend[b], self.mate[self.blossombase[b]]);
            if self.labelend[b] == SENTINEL {
                // Base of b is single; this path ends here.
                v = SENTINEL;
            } else {
                v = self.endpoint[self.labelend[b]];
                b = self.inblossom[v];
                assert_eq!(self.label[b], LABEL_T);
                assert!(self.labelend[b] != SENTINEL);
                v = self.endpoint[self.labelend[b]];
            }
            if w != SENTINEL {
                std::mem::swap(&mut v, &mut w);
            }
        }
        for b in path {
            self.label[b] = LABEL_S;
        }
        base
    }

    /// Shrink the circuit through edge k (joining two S-blossoms) and `base`
    /// into a new S-blossom with dual zero.
    fn add_blossom(&mut self, base: usize, k: usize) {
        let (mut v, mut w, _) = self.edges[k];
        let bb = self.inblossom[base];
        let mut bv = self.inblossom[v];
        let mut bw = self.inblossom[w];

        let b = self.unusedblossoms.pop().expect("ran out of blossom slots");
        self.blossombase[b] = base;
        self.blossomparent[b] = SENTINEL;
        self.blossomparent[bb] = b;

        let mut path = Vec::new();
        let mut endps = Vec::new();
        while bv != bb {
            self.blossomparent[bv] = b;
            path.push(bv);
            endps.push(self.labelend[bv]);
            assert!(
                self.label[bv] == LABEL_T
                    || (self.label[bv] == LABEL_S
                        && self.labelend[bv] == self.mate[self.blossombase[bv]])
            );
            assert!(self.labelend[bv] != SENTINEL);
            v = self.endpoint[self.labelend[bv]];
            bv = self.inblossom[v];
        }
        path.push(bb);
        path.reverse();
        endps.reverse();
        endps.push(2 * k);
        while bw != bb {
            self.blossomparent[bw] = b;
            path.push(bw);
            endps.push(self.labelend[bw] ^ 1);
            assert!(
                self.label[bw] == LABEL_T
                    || (self.label[bw] == LABEL_S
                        && self.labelend[bw] == self.mate[self.blossombase[bw]])
            );
            assert!(self.labelend[bw] != SENTINEL);
            w = self.endpoint[self.labelend[bw]];
            bw = self.inblossom[w];
        }
        self.blossomchilds[b] = path;
        self.blossomendps[b] = endps;

        assert_eq!(self.label[bb], LABEL_S);
        self.label[b] = LABEL_S;
        self.labelend[b] = self.labelend[bb];
        self.dualvar[b] = 0;

        for v in self.blossom_leaves(b) {
            if self.label[self.inblossom[v]] == LABEL_T {
                // Former T-vertex becomes S inside the new blossom.
                self.queue.push(v);
            }
            self.inblossom[v] = b;
        }

        // Merge least-slack edge lists of the children.
        let mut bestedgeto = vec![SENTINEL; 2 * self.nvertex];
        let childs = self.blossomchilds[b].clone();
        for bv in childs {
            let nblists: Vec<Vec<usize>> = if self.blossombestedges[bv].is_empty() {
                self.blossom_leaves(bv)
                    .into_iter()
                    .map(|v| self.neighbend[v].iter().map(|p| p / 2).collect())
                    .collect()
            } else {
                vec![self.blossombestedges[bv].clone()]
            };
            for nblist in nblists {
                for k in nblist {
                    let (mut i, mut j, _) = self.edges[k];
                    if self.inblossom[j] == b {
                        std::mem::swap(&mut i, &mut j);
                    }
                    let _ = i;
                    let bj = self.inblossom[j];
                    if bj != b
                        && self.label[bj] == LABEL_S
                        && (bestedgeto[bj] == SENTINEL || self.slack(k) < self.slack(bestedgeto[bj]))
                    {
                        bestedgeto[bj] = k;
                    }
                }
            }
            self.blossombestedges[bv].clear();
            self.bestedge[bv] = SENTINEL;
        }
        self.blossombestedges[b] = bestedgeto.into_iter().filter(|&k| k != SENTINEL).collect();
        self.bestedge[b] = SENTINEL;
        for idx in 0..self.blossombestedges[b].len() {
            let k = self.blossombestedges[b][idx];
            if self.bestedge[b] == SENTINEL || self.slack(k) < self.slack(self.bestedge[b]) {
                self.bestedge[b] = k;
            }
        }
    }

    /// Expand top-level blossom b into its sub-blossoms; during a stage a
    /// T-blossom's children are relabeled along the alternating path.
    fn expand_blossom(&mut self, b: usize, endstage: bool) {
        for s in self.blossomchilds[b].clone() {
            self.blossomparent[s] = SENTINEL;
            if s < self.nvertex {
                self.inblossom[s] = s;
            } else if endstage && self.dualvar[s] == 0 {
                self.expand_blossom(s, endstage);
            } else {
                for v in self.blossom_leaves(s) {
                    self.inblossom[v] = s;
                }
            }
        }

        if !endstage && self.label[b] == LABEL_T {
            assert!(self.labelend[b] != SENTINEL);
            let entrychild = self.inblossom[self.endpoint[self.labelend[b] ^ 1]];
            let len = self.blossomchilds[b].len() as isize;
            let mut j = self.blossomchilds[b]
                .iter()
                .position(|&c| c == entrychild)
                .unwrap() as isize;
            let (jstep, endptrick): (isize, usize) = if j & 1 != 0 {
                // Odd entry index: go forward around the blossom.
                j -= len;
                (1, 0)
            } else {
                (-1, 1)
            };

            let mut p = self.labelend[b];
            while j != 0 {
                // Relabel the T-sub-blossom reached through endpoint p.
                self.label[self.endpoint[p ^ 1]] = LABEL_FREE;
                let q = self.wrap_endp(b, j - endptrick as isize) ^ endptrick;
                self.label[self.endpoint[q ^ 1]] = LABEL_FREE;
                let ep = self.endpoint[p ^ 1];
                self.assign_label(ep, LABEL_T, p);

                // The connecting edges have zero slack inside the blossom.
                let allowed = self.wrap_endp(b, j - endptrick as isize) / 2;
                self.allowedge[allowed] = true;
                j += jstep;
                p = self.wrap_endp(b, j - endptrick as isize) ^ endptrick;
                self.allowedge[p / 2] = true;
                j += jstep;
            }

            // Base sub-blossom becomes T without stepping to its mate.
            let bv = self.wrap_child(b, j);
            self.label[self.endpoint[p ^ 1]] = LABEL_T;
            self.label[bv] = LABEL_T;
            self.labelend[self.endpoint[p ^ 1]] = p;
            self.labelend[bv] = p;
            self.bestedge[bv] = SENTINEL;

            // Remaining sub-blossoms keep label only if reachable from
            // outside the expanded blossom.
            j += jstep;
            while self.wrap_child(b, j) != entrychild {
                let bv = self.wrap_child(b, j);
                if self.label[bv] == LABEL_S {
                    j += jstep;
                    continue;
                }
                let mut v = SENTINEL;
                for leaf in self.blossom_leaves(bv) {
                    v = leaf;
                    if self.label[v] != LABEL_FREE {
                        break;
                    }
                }
                if v != SENTINEL && self.label[v] != LABEL_FREE {
                    assert_eq!(self.label[v], LABEL_T);
                    assert_eq!(self.inblossom[v], bv);
                    self.label[v] = LABEL_FREE;
                    self.label[self.endpoint[self.mate[self.blossombase[bv]]]] = LABEL_FREE;
                    let lblend = self.labelend[v];
                    self.assign_label(v, LABEL_T, lblend);
                }
                j += jstep;
            }
        }

        self.label[b] = LABEL_FREE;
        self.labelend[b] = SENTINEL;
        self.blossombase[b] = SENTINEL;
        self.bestedge[b] = SENTINEL;
        self.blossomchilds[b].clear();
        self.blossomendps[b].clear();
        self.blossombestedges[b].clear();
        self.unusedblossoms.push(b);
    }

    #[inline]
    fn wrap_child(&self, b: usize, j: isize) -> usize {
        let len = self.blossomchilds[b].len() as isize;
        self.blossomchilds[b][j.rem_euclid(len) as usize]
    }

    #[inline]
    fn wrap_endp(&self, b: usize, j: isize) -> usize {
        let len = self.blossomendps[b].len() as isize;
        self.blossomendps[b][j.rem_euclid(len) as usize]
    }

    /// Swap matched/unmatched edges along the path inside blossom b from
    /// vertex v to the base, making v the new base.
    fn augment_blossom(&mut self, b: usize, v: usize) {
        let mut t = v;
        while self.blossomparent[t] != b {
            t = self.blossomparent[t];
        }
        if t >= self.nvertex {
            self.augment_blossom(t, v);
        }

        let i = self.blossomchilds[b].iter().position(|&c| c == t).unwrap();
        let mut j = i as isize;
        let (jstep, _endptrick): (isize, usize) = if i & 1 != 0 {
            j -= self.blossomchilds[b].len() as isize;
            (1, 0)
        } else {
            (-1, 1)
        };

        while j != 0 {
            j += jstep;
            let t = self.wrap_child(b, j);
            let p = if jstep == 1 {
                self.wrap_endp(b, j)
            } else {
                self.wrap_endp(b, j - 1) ^ 1
            };
            if t >= self.nvertex {
                self.augment_blossom(t, self.endpoint[p]);
            }
            j += jstep;
            let t = self.wrap_child(b, j);
            if t >= self.nvertex {
                self.augment_blossom(t, self.endpoint[p ^ 1]);
            }
            self.mate[self.endpoint[p]] = p ^ 1;
            self.mate[self.endpoint[p ^ 1]] = p;
        }

        self.blossomchilds[b].rotate_left(i);
        self.blossomendps[b].rotate_left(i);
        self.blossombase[b] = self.blossombase[self.blossomchilds[b][0]];
        assert_eq!(self.blossombase[b], v);
    }

    /// Swap matched/unmatched edges along the augmenting path through edge k.
    fn augment_matching(&mut self, k: usize) {
        let (v, w, _) = self.edges[k];
        for (mut s, mut p) in [(v, 2 * k + 1), (w, 2 * k)] {
            loop {
                let bs = self.inblossom[s];
                assert_eq!(self.label[bs], LABEL_S);
                assert_eq!(self.labelend[bs], self.mate[self.blossombase[bs]]);
                if bs >= self.nvertex {
                    self.augment_blossom(bs, s);
                }
                self.mate[s] = p;
                if self.labelend[bs] == SENTINEL {
                    // Reached a single vertex; this end of the path is done.
                    break;
                }
                let t = self.endpoint[self.labelend[bs]];
                let bt = self.inblossom[t];
                assert_eq!(self.label[bt], LABEL_T);
                assert!(self.labelend[bt] != SENTINEL);
                s = self.endpoint[self.labelend[bt]];
                let j = self.endpoint[self.labelend[bt] ^ 1];
                assert_eq!(self.blossombase[bt], t);
                if bt >= self.nvertex {
                    self.augment_blossom(bt, j);
                }
                self.mate[j] = self.labelend[bt];
                p = self.labelend[bt] ^ 1;
            }
        }
    }

    /// Complementary-slackness check of the final primal/dual pair.
    fn verify_optimum(&self) {
        let vdualoffset: Weight = if self.max_cardinality {
            (-self.dualvar[..self.nvertex].iter().min().copied().unwrap_or(0)).max(0)
        } else {
            0
        };
        assert!(
            self.dualvar[..self.nvertex]
                .iter()
                .all(|&d| d + vdualoffset >= 0)
        );
        assert!(self.dualvar[self.nvertex..].iter().all(|&d| d >= 0));

        for k in 0..self.nedge {
            let (i, j, wt) = self.edges[k];
            let mut s = self.dualvar[i] + self.dualvar[j] - 2 * wt;
            let mut iblossoms = vec![i];
            let mut jblossoms = vec![j];
            while self.blossomparent[*iblossoms.last().unwrap()] != SENTINEL {
                iblossoms.push(self.blossomparent[*iblossoms.last().unwrap()]);
            }
            while self.blossomparent[*jblossoms.last().unwrap()] != SENTINEL {
                jblossoms.push(self.blossomparent[*jblossoms.last().unwrap()]);
            }
            iblossoms.reverse();
            jblossoms.reverse();
            for (&bi, &bj) in iblossoms.iter().zip(jblossoms.iter()) {
                if bi != bj {
                    break;
                }
                s += 2 * self.dualvar[bi];
            }
            assert!(s >= 0, "edge {k} has negative slack");
            if self.mate[i] / 2 == k || self.mate[j] / 2 == k {
                assert!(self.mate[i] / 2 == k && self.mate[j] / 2 == k);
                assert_eq!(s, 0, "matched edge {k} has nonzero slack");
            }
        }
        for v in 0..self.nvertex {
            assert!(self.mate[v] != SENTINEL || self.dualvar[v] + vdualoffset == 0);
        }
        for b in self.nvertex..2 * self.nvertex {
            if self.blossombase[b] != SENTINEL && self.dualvar[b] > 0 {
                assert_eq!(self.blossomendps[b].len() % 2, 1);
                for (ix, &p) in self.blossomendps[b].iter().enumerate() {
                    if ix % 2 == 1 {
                        assert_eq!(self.mate[self.endpoint[p]], p ^ 1);
                        assert_eq!(self.mate[self.endpoint[p ^ 1]], p);
                    }
                }
            }
        }
    }

    fn solve(mut self) -> Vec<usize> {
        if self.nedge == 0 {
            return self.mate;
        }

        // Warm start: match tight edges greedily. Matched edges must have
        // zero slack, so this preserves the primal-dual invariants while
        // skipping one full stage per matched pair.
        if self.max_cardinality {
            for v in 0..self.nvertex {
                if self.mate[v] != SENTINEL {
                    continue;
                }
                for idx in 0..self.neighbend[v].len() {
                    let p = self.neighbend[v][idx];
                    let w = self.endpoint[p];
                    if self.mate[w] == SENTINEL && self.slack(p >> 1) == 0 {
                        self.mate[v] = p;
                        self.mate[w] = p ^ 1;
                        break;
                    }
                }
            }
        }

        // Each stage augments the matching by one edge or proves optimality.
        for _ in 0..self.nvertex {
            self.label.fill(LABEL_FREE);
            self.bestedge.fill(SENTINEL);
            for b in self.nvertex..2 * self.nvertex {
                self.blossombestedges[b].clear();
            }
            self.allowedge.fill(false);
            self.queue.clear();

            for v in 0..self.nvertex {
                if self.mate[v] == SENTINEL && self.label[self.inblossom[v]] == LABEL_FREE {
                    self.assign_label(v, LABEL_S, SENTINEL);
                }
            }

            let mut augmented = false;
            loop {
                // Grow alternating trees until an augmenting path is found or
                // the trees are saturated.
                'queue: while let Some(v) = self.queue.pop() {
                    // v's blossom only changes when add_blossom runs below.
                    let mut bv = self.inblossom[v];
                    assert_eq!(self.label[bv], LABEL_S);
                    for idx in 0..self.neighbend[v].len() {
                        let p = self.neighbend[v][idx];
                        let k = p >> 1;
                        let w = self.endpoint[p];
                        let bw = self.inblossom[w];
                        if bv == bw {
                            continue;
                        }
                        let mut kslack = 0;
                        if !self.allowedge[k] {
                            kslack = self.slack(k);
                            if kslack <= 0 {
                                self.allowedge[k] = true;
                            }
                        }
                        if self.allowedge[k] {
                            if self.label[bw] == LABEL_FREE {
                                self.assign_label(w, LABEL_T, p ^ 1);
                            } else if self.label[bw] == LABEL_S {
                                let base = self.scan_blossom(v, w);
                                if base != SENTINEL {
                                    self.add_blossom(base, k);
                                    bv = self.inblossom[v];
                                } else {
                                    self.augment_matching(k);
                                    augmented = true;
                                    break 'queue;
                                }
                            } else if self.label[w] == LABEL_FREE {
                                // Inside a T-blossom but not yet reached from
                                // outside; remember the entry for expansion.
                                assert_eq!(self.label[bw], LABEL_T);
                                self.label[w] = LABEL_T;
                                self.labelend[w] = p ^ 1;
                            }
                        } else if self.label[bw] == LABEL_S {
                            if self.bestedge[bv] == SENTINEL
                                || kslack < self.slack(self.bestedge[bv])
                            {
                                self.bestedge[bv] = k;
                            }
                        } else if self.label[w] == LABEL_FREE
                            && (self.bestedge[w] == SENTINEL
                                || kslack < self.slack(self.bestedge[w]))
                        {
                            self.bestedge[w] = k;
                        }
                    }
                }
                if augmented {
                    break;
                }

                // Dual update. Slacks and duals are premultiplied by two.
                let mut deltatype = -1;
                let mut delta: Weight = 0;
                let mut deltaedge = SENTINEL;
                let mut deltablossom = SENTINEL;

                if !self.max_cardinality {
                    deltatype = 1;
                    delta = self.dualvar[..self.nvertex].iter().min().copied().unwrap();
                }

                for v in 0..self.nvertex {
                    if self.label[self.inblossom[v]] == LABEL_FREE
                        && self.bestedge[v] != SENTINEL
                    {
                        let d = self.slack(self.bestedge[v]);
                        if deltatype == -1 || d < delta {
                            delta = d;
                            deltatype = 2;
                            deltaedge = self.bestedge[v];
                        }
                    }
                }
                for b in 0..2 * self.nvertex {
                    if self.blossomparent[b] == SENTINEL
                        && self.label[b] == LABEL_S
                        && self.bestedge[b] != SENTINEL
                    {
                        let kslack = self.slack(self.bestedge[b]);
                        debug_assert_eq!(kslack % 2, 0, "S-S slack must stay even");
                        let d = kslack / 2;
                        if deltatype == -1 || d < delta {
                            delta = d;
                            deltatype = 3;
                            deltaedge = self.bestedge[b];
                        }
                    }
                }
                for b in self.nvertex..2 * self.nvertex {
                    if self.blossombase[b] != SENTINEL
                        && self.blossomparent[b] == SENTINEL
                        && self.label[b] == LABEL_T
                        && (deltatype == -1 || self.dualvar[b] < delta)
                    {
                        delta = self.dualvar[b];
                        deltatype = 4;
                        deltablossom = b;
                    }
                }

                if deltatype == -1 {
                    // No improvement possible: maximum-cardinality optimum.
                    assert!(self.max_cardinality);
                    deltatype = 1;
                    delta = self.dualvar[..self.nvertex]
                        .iter()
                        .min()
                        .copied()
                        .unwrap()
                        .max(0);
                }

                for v in 0..self.nvertex {
                    match self.label[self.inblossom[v]] {
                        LABEL_FREE => {}
                        LABEL_S => self.dualvar[v] -= delta,
                        LABEL_T => self.dualvar[v] += delta,
                        other => panic!("unexpected vertex label {other}"),
                    }
                }
                for b in self.nvertex..2 * self.nvertex {
                    if self.blossombase[b] != SENTINEL && self.blossomparent[b] == SENTINEL {
                        match self.label[b] {
                            LABEL_FREE => {}
                            LABEL_S => self.dualvar[b] += delta,
                            LABEL_T => self.dualvar[b] -= delta,
                            other => panic!("unexpected blossom label {other}"),
                        }
                    }
                }

                match deltatype {
                    1 => break,
                    2 => {
                        self.allowedge[deltaedge] = true;
                        let (mut i, j, _) = self.edges[deltaedge];
                        if self.label[self.inblossom[i]] == LABEL_FREE {
                            i = j;
                        }
                        assert_eq!(self.label[self.inblossom[i]], LABEL_S);
                        self.queue.push(i);
                    }
                    3 => {
                        self.allowedge[deltaedge] = true;
                        let (i, _, _) = self.edges[deltaedge];
                        assert_eq!(self.label[self.inblossom[i]], LABEL_S);
                        self.queue.push(i);
                    }
                    4 => self.expand_blossom(deltablossom, false),
                    other => panic!("unexpected delta type {other}"),
                }
            }

            if !augmented {
                break;
            }

            // End of stage: expand S-blossoms whose dual dropped to zero.
            for b in self.nvertex..2 * self.nvertex {
                if self.blossomparent[b] == SENTINEL
                    && self.blossombase[b] != SENTINEL
                    && self.label[b] == LABEL_S
                    && self.dualvar[b] == 0
                {
                    self.expand_blossom(b, true);
                }
            }
        }

        if cfg!(debug_assertions) {
            self.verify_optimum();
        }

        // Convert mate from endpoints to partner vertices.
        let mut mate = self.mate.clone();
        for v in 0..self.nvertex {
            if mate[v] != SENTINEL {
                mate[v] = self.endpoint[mate[v]];
            }
        }
        for v in 0..self.nvertex {
            assert!(mate[v] == SENTINEL || mate[mate[v]] == v);
        }
        mate
    }
}

/// Maximum-weight matching on `nvertex` vertices.
///
/// Returns `mate` with `mate[v]` the partner of v, or [`SENTINEL`] if v is
/// unmatched. With `max_cardinality` only maximum-cardinality matchings are
/// considered (required when weights may be negative and a perfect matching
/// is wanted).
pub(crate) fn max_weight_matching(
    nvertex: usize,
    edges: &[(usize, usize, Weight)],
    max_cardinality: bool,
) -> Vec<usize> {
    if nvertex == 0 {
        return Vec::new();
    }
    Solver::new(nvertex, edges.to_vec(), max_cardinality).solve()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mates(edges: &[(usize, usize, Weight)], max_card: bool) -> Vec<usize> {
        let n = edges
            .iter()
            .map(|&(i, j, _)| i.max(j) + 1)
            .max()
            .unwrap_or(0);
        max_weight_matching(n, edges, max_card)
    }

    const U: usize = SENTINEL;

    #[test]
    fn trivial_cases() {
        assert!(max_weight_matching(0, &[], false).is_empty());
        assert_eq!(mates(&[(0, 1, 1)], false), vec![1, 0]);
        assert_eq!(mates(&[(1, 2, 10), (2, 3, 11)], false), vec![U, U, 3, 2]);
        assert_eq!(
            mates(&[(1, 2, 5), (2, 3, 11), (3, 4, 5)], false),
            vec![U, U, 3, 2, U]
        );
    }

    #[test]
    fn max_cardinality_changes_answer() {
        assert_eq!(
            mates(&[(1, 2, 5), (2, 3, 11), (3, 4, 5)], true),
            vec![U, 2, 1, 4, 3]
        );
    }

    #[test]
    fn negative_weights() {
        let e = [(1, 2, 2), (1, 3, -2), (2, 3, 1), (2, 4, -1), (3, 4, -6)];
        assert_eq!(mates(&e, false), vec![U, 2, 1, U, U]);
        assert_eq!(mates(&e, true), vec![U, 3, 4, 1, 2]);
    }

    #[test]
    fn s_blossom_augmentation() {
        assert_eq!(
            mates(&[(1, 2, 8), (1, 3, 9), (2, 3, 10), (3, 4, 7)], false),
            vec![U, 2, 1, 4, 3]
        );
        assert_eq!(
            mates(
                &[(1, 2, 8), (1, 3, 9), (2, 3, 10), (3, 4, 7), (1, 6, 5), (4, 5, 6)],
                false
            ),
            vec![U, 6, 3, 2, 5, 4, 1]
        );
    }

    #[test]
    fn s_to_t_relabel_augmentation() {
        assert_eq!(
            mates(
                &[(1, 2, 9), (1, 3, 8), (2, 3, 10), (1, 4, 5), (4, 5, 4), (1, 6, 3)],
                false
            ),
            vec![U, 6, 3, 2, 5, 4, 1]
        );
        assert_eq!(
            mates(
                &[(1, 2, 9), (1, 3, 8), (2, 3, 10), (1, 4, 5), (4, 5, 3), (1, 6, 4)],
                false
            ),
            vec![U, 6, 3, 2, 5, 4, 1]
        );
        assert_eq!(
            mates(
                &[(1, 2, 9), (1, 3, 8), (2, 3, 10), (1, 4, 5), (4, 5, 3), (3, 6, 4)],
                false
            ),
            vec![U, 2, 1, 6, 5, 4, 3]
        );
    }

    #[test]
    fn nested_s_blossom_augmentation() {
        assert_eq!(
            mates(
                &[(1, 2, 9), (1, 3, 9), (2, 3, 10), (2, 4, 8), (3, 5, 8), (4, 5, 10), (5, 6, 6)],
                false
            ),
            vec![U, 3, 4, 1, 2, 6, 5]
        );
    }

    #[test]
    fn nested_s_blossom_relabel_expand() {
        assert_eq!(
            mates(
                &[
                    (1, 2, 10),
                    (1, 7, 10),
                    (2, 3, 12),
                    (3, 4, 20),
                    (3, 5, 20),
                    (4, 5, 25),
                    (5, 6, 10),
                    (6, 7, 10),
                    (7, 8, 8)
                ],
                false
            ),
            vec![U, 2, 1, 4, 3, 6, 5, 8, 7]
        );
    }

    #[test]
    fn nested_s_blossom_expand_recursively() {
        assert_eq!(
            mates(
                &[
                    (1, 2, 8),
                    (1, 3, 8),
                    (2, 3, 10),
                    (2, 4, 12),
                    (3, 5, 12),
                    (4, 5, 14),
                    (4, 6, 12),
                    (5, 7, 12),
                    (6, 7, 14),
                    (7, 8, 12)
                ],
                false
            ),
            vec![U, 2, 1, 5, 6, 3, 4, 8, 7]
        );
    }

    #[test]
    fn s_blossom_relabel_as_t_expand() {
        assert_eq!(
            mates(
                &[
                    (1, 2, 23),
                    (1, 5, 22),
                    (1, 6, 15),
                    (2, 3, 25),
                    (3, 4, 22),
                    (4, 5, 25),
                    (4, 8, 14),
                    (5, 7, 13)
                ],
                false
            ),
            vec![U, 6, 3, 2, 8, 7, 1, 5, 4]
        );
    }

    #[test]
    fn nested_s_blossom_relabel_as_t_expand() {
        assert_eq!(
            mates(
                &[
                    (1, 2, 19),
                    (1, 3, 20),
                    (1, 8, 8),
                    (2, 3, 25),
                    (2, 4, 18),
                    (3, 5, 18),
                    (4, 5, 13),
                    (4, 7, 7),
                    (5, 6, 7)
                ],
                false
            ),
            vec![U, 8, 3, 2, 7, 6, 5, 4, 1]
        );
    }

    #[test]
    fn t_blossom_nasty_expand_cases() {
        assert_eq!(
            mates(
                &[
                    (1, 2, 45),
                    (1, 5, 45),
                    (2, 3, 50),
                    (3, 4, 45),
                    (4, 5, 50),
                    (1, 6, 30),
                    (3, 9, 35),
                    (4, 8, 35),
                    (5, 7, 26),
                    (9, 10, 5)
                ],
                false
            ),
            vec![U, 6, 3, 2, 8, 7, 1, 5, 4, 10, 9]
        );
        assert_eq!(
            mates(
                &[
                    (1, 2, 45),
                    (1, 5, 45),
                    (2, 3, 50),
                    (3, 4, 45),
                    (4, 5, 50),
                    (1, 6, 30),
                    (3, 9, 35),
                    (4, 8, 26),
                    (5, 7, 40),
                    (9, 10, 5)
                ],
                false
            ),
            vec![U, 6, 3, 2, 8, 7, 1, 5, 4, 10, 9]
        );
        assert_eq!(
            mates(
                &[
                    (1, 2, 45),
                    (1, 5, 45),
                    (2, 3, 50),
                    (3, 4, 45),
                    (4, 5, 50),
                    (1, 6, 30),
                    (3, 9, 35),
                    (4, 8, 28),
                    (5, 7, 26),
                    (9, 10, 5)
                ],
                false
            ),
            vec![U, 6, 3, 2, 8, 7, 1, 5, 4, 10, 9]
        );
    }

    #[test]
    fn nested_t_blossom_nasty_expand() {
        assert_eq!(
            mates(
                &[
                    (1, 2, 45),
                    (1, 7, 45),
                    (2, 3, 50),
                    (3, 4, 45),
                    (4, 5, 95),
                    (4, 6, 94),
                    (5, 6, 94),
                    (6, 7, 50),
                    (1, 8, 30),
                    (3, 11, 35),
                    (5, 9, 36),
                    (7, 10, 26),
                    (11, 12, 5)
                ],
                false
            ),
            vec![U, 8, 3, 2, 6, 9, 4, 10, 1, 5, 7, 12, 11]
        );
    }

    #[test]
    fn nested_blossom_relabel_expand_recursively() {
        assert_eq!(
            mates(
                &[
                    (1, 2, 40),
                    (1, 3, 40),
                    (2, 3, 60),
                    (2, 4, 55),
                    (3, 5, 55),
                    (4, 5, 50),
                    (1, 8, 15),
                    (5, 7, 30),
                    (7, 6, 10),
                    (8, 10, 10),
                    (4, 9, 30)
                ],
                false
            ),
            vec![U, 2, 1, 5, 9, 3, 7, 6, 10, 4, 8]
        );
    }
}
