// Maximum-weight matching in general (non-bipartite) graphs.
//
// Primal-dual blossom method (Edmonds), following the O(n^3) formulation
// described by Galil (ACM Computing Surveys, 1986).  Integer edge weights
// only; callers scale floating point costs before entering.  With
// max_cardinality=true the result is a maximum-cardinality matching of
// maximum weight among all maximum-cardinality matchings.
//
// Vertices are 0..n-1 and double as trivial blossoms; slots n..2n-1 hold
// non-trivial blossoms and are recycled when blossoms expand.

#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace py = pybind11;

namespace {

using std::int64_t;
using VW = std::pair<int, int>;  // directed edge (v, w); (-1, -1) = none

constexpr VW NO_EDGE{-1, -1};

struct Matcher {
    int n;
    bool maxcardinality;

    std::vector<std::vector<std::pair<int, int64_t>>> adj;  // (neighbor, weight)
    std::vector<int64_t> wmat;  // dense weight lookup, n*n

    std::vector<int> mate;            // size n, -1 if single
    std::vector<int> label;           // size 2n, 0 = free
    std::vector<VW> labeledge;        // size 2n
    std::vector<int> inblossom;       // size n, top-level blossom of vertex
    std::vector<int> blossomparent;   // size 2n, -1 = top level
    std::vector<int> blossombase;     // size 2n
    std::vector<std::vector<int>> childs;   // size 2n; used for slots >= n
    std::vector<std::vector<VW>> bedges;    // size 2n; connecting edges
    std::vector<VW> bestedge;               // size 2n
    std::vector<std::vector<VW>> mybestedges;  // size 2n
    std::vector<char> mybestset;            // size 2n
    std::vector<int64_t> dualvar;           // size n, 2*u(v)
    std::vector<int64_t> blossomdual;       // size 2n, z(b) for slots >= n
    std::vector<char> inuse;                // size 2n, slot holds live blossom
    std::vector<char> allowed;              // dense n*n
    std::vector<int> queue;
    std::vector<int> freeslots;

    Matcher(int n_, const std::vector<std::tuple<int, int, int64_t>>& edges,
            bool maxcard)
        : n(n_), maxcardinality(maxcard) {
        adj.resize(n);
        wmat.assign(static_cast<size_t>(n) * n, 0);
        int64_t maxweight = 0;
        for (const auto& [i, j, w] : edges) {
            if (i < 0 || j < 0 || i >= n || j >= n || i == j)
                throw std::invalid_argument("bad edge endpoints");
            adj[i].emplace_back(j, w);
            adj[j].emplace_back(i, w);
            wmat[static_cast<size_t>(i) * n + j] = w;
            wmat[static_cast<size_t>(j) * n + i] = w;
            maxweight = std::max(maxweight, w);
        }
        mate.assign(n, -1);
        label.assign(2 * n, 0);
        labeledge.assign(2 * n, NO_EDGE);
        inblossom.resize(n);
        for (int v = 0; v < n; ++v) inblossom[v] = v;
        blossomparent.assign(2 * n, -1);
        blossombase.assign(2 * n, -1);
        for (int v = 0; v < n; ++v) blossombase[v] = v;
        childs.resize(2 * n);
        bedges.resize(2 * n);
        bestedge.assign(2 * n, NO_EDGE);
        mybestedges.resize(2 * n);
        mybestset.assign(2 * n, 0);
        dualvar.assign(n, maxweight);
        blossomdual.assign(2 * n, 0);
        inuse.assign(2 * n, 0);
        allowed.assign(static_cast<size_t>(n) * n, 0);
        for (int s = 2 * n - 1; s >= n; --s) freeslots.push_back(s);
    }

    int64_t weight(int v, int w) const {
        return wmat[static_cast<size_t>(v) * n + w];
    }

    // 2 * slack of edge (v, w); valid only for existing edges between
    // distinct top-level blossoms.
    int64_t slack(int v, int w) const {
        return dualvar[v] + dualvar[w] - 2 * weight(v, w);
    }

    bool edge_allowed(int v, int w) const {
        return allowed[static_cast<size_t>(v) * n + w] != 0;
    }

    void allow_edge(int v, int w) {
        allowed[static_cast<size_t>(v) * n + w] = 1;
        allowed[static_cast<size_t>(w) * n + v] = 1;
    }

    bool is_blossom(int b) const { return b >= n; }

    // Collect the leaf vertices of (sub-)blossom b.
    void leaves(int b, std::vector<int>& out) const {
        std::vector<int> stack{b};
        while (!stack.empty()) {
            int t = stack.back();
            stack.pop_back();
            if (is_blossom(t))
                stack.insert(stack.end(), childs[t].begin(), childs[t].end());
            else
                out.push_back(t);
        }
    }

    void assign_label(int w, int t, int v) {
        int b = inblossom[w];
        if (label[w] != 0 || label[b] != 0)
            throw std::logic_error("assign_label on labeled vertex");
        label[w] = label[b] = t;
        if (v >= 0)
            labeledge[w] = labeledge[b] = VW{v, w};
        else
            labeledge[w] = labeledge[b] = NO_EDGE;
        bestedge[w] = bestedge[b] = NO_EDGE;
        if (t == 1) {
            if (is_blossom(b)) {
                std::vector<int> lv;
                leaves(b, lv);
                queue.insert(queue.end(), lv.begin(), lv.end());
            } else {
                queue.push_back(b);
            }
        } else if (t == 2) {
            int base = blossombase[b];
            assign_label(mate[base], 1, base);
        }
    }

    // Trace back from v and w; return the base of a new blossom, or -1 if
    // an augmenting path was found.
    int scan_blossom(int v, int w) {
        std::vector<int> path;
        int base = -1;
        while (v >= 0) {
            int b = inblossom[v];
            if (label[b] & 4) {
                base = blossombase[b];
                break;
            }
            path.push_back(b);
            label[b] = 5;
            if (labeledge[b] == NO_EDGE) {
                v = -1;
            } else {
                v = labeledge[b].first;
                b = inblossom[v];
                v = labeledge[b].first;
            }
            if (w >= 0) std::swap(v, w);
        }
        for (int b : path) label[b] = 1;
        return base;
    }

    void add_blossom(int base, int v, int w) {
        int bb = inblossom[base];
        int bv = inblossom[v];
        int bw = inblossom[w];
        if (freeslots.empty()) throw std::logic_error("no free blossom slot");
        int b = freeslots.back();
        freeslots.pop_back();
        inuse[b] = 1;
        blossombase[b] = base;
        blossomparent[b] = -1;
        blossomparent[bb] = b;
        std::vector<int>& path = childs[b];
        std::vector<VW>& edgs = bedges[b];
        path.clear();
        edgs.clear();
        edgs.push_back(VW{v, w});
        while (bv != bb) {
            blossomparent[bv] = b;
            path.push_back(bv);
            edgs.push_back(labeledge[bv]);
            v = labeledge[bv].first;
            bv = inblossom[v];
        }
        path.push_back(bb);
        std::reverse(path.begin(), path.end());
        std::reverse(edgs.begin(), edgs.end());
        while (bw != bb) {
            blossomparent[bw] = b;
            path.push_back(bw);
            edgs.push_back(VW{labeledge[bw].second, labeledge[bw].first});
            w = labeledge[bw].first;
            bw = inblossom[w];
        }
        label[b] = 1;
        labeledge[b] = labeledge[bb];
        blossomdual[b] = 0;
        std::vector<int> lv;
        leaves(b, lv);
        for (int u : lv) {
            if (label[inblossom[u]] == 2) queue.push_back(u);
            inblossom[u] = b;
        }
        // Compute least-slack edges to neighboring S-blossoms.
        std::vector<VW> bestedgeto(2 * n, NO_EDGE);
        std::vector<int> touched;
        for (int child : path) {
            std::vector<VW> nblist;
            if (is_blossom(child)) {
                if (mybestset[child]) {
                    nblist = std::move(mybestedges[child]);
                    mybestedges[child].clear();
                    mybestset[child] = 0;
                } else {
                    std::vector<int> clv;
                    leaves(child, clv);
                    for (int u : clv)
                        for (const auto& [x, wt] : adj[u]) {
                            (void)wt;
                            if (u != x) nblist.push_back(VW{u, x});
                        }
                }
            } else {
                for (const auto& [x, wt] : adj[child]) {
                    (void)wt;
                    if (child != x) nblist.push_back(VW{child, x});
                }
            }
            for (VW k : nblist) {
                int i = k.first, j = k.second;
                if (inblossom[j] == b) std::swap(i, j);
                int bj = inblossom[j];
                if (bj != b && label[bj] == 1 &&
                    (bestedgeto[bj] == NO_EDGE ||
                     slack(i, j) <
                         slack(bestedgeto[bj].first, bestedgeto[bj].second))) {
                    if (bestedgeto[bj] == NO_EDGE) touched.push_back(bj);
                    bestedgeto[bj] = k;
                }
            }
            bestedge[child] = NO_EDGE;
        }
        mybestedges[b].clear();
        for (int bj : touched) mybestedges[b].push_back(bestedgeto[bj]);
        mybestset[b] = 1;
        VW mybest = NO_EDGE;
        int64_t myslack = 0;
        for (VW k : mybestedges[b]) {
            int64_t ks = slack(k.first, k.second);
            if (mybest == NO_EDGE || ks < myslack) {
                mybest = k;
                myslack = ks;
            }
        }
        bestedge[b] = mybest;
    }

    static int wrap(int j, int len) { return ((j % len) + len) % len; }

    void expand_blossom(int b, bool endstage) {
        for (int s : childs[b]) {
            blossomparent[s] = -1;
            if (is_blossom(s)) {
                if (endstage && blossomdual[s] == 0) {
                    expand_blossom(s, endstage);
                } else {
                    std::vector<int> lv;
                    leaves(s, lv);
                    for (int u : lv) inblossom[u] = s;
                }
            } else {
                inblossom[s] = s;
            }
        }
        if (!endstage && label[b] == 2) {
            int entrychild = inblossom[labeledge[b].second];
            int len = static_cast<int>(childs[b].size());
            int j = 0;
            while (childs[b][j] != entrychild) ++j;
            int jstep;
            if (j & 1) {
                j -= len;
                jstep = 1;
            } else {
                jstep = -1;
            }
            int v = labeledge[b].first;
            int w = labeledge[b].second;
            while (j != 0) {
                int p, q;
                if (jstep == 1) {
                    p = bedges[b][wrap(j, len)].first;
                    q = bedges[b][wrap(j, len)].second;
                } else {
                    q = bedges[b][wrap(j - 1, len)].first;
                    p = bedges[b][wrap(j - 1, len)].second;
                }
                label[w] = 0;
                label[q] = 0;
                assign_label(w, 2, v);
                allow_edge(p, q);
                j += jstep;
                if (jstep == 1) {
                    v = bedges[b][wrap(j, len)].first;
                    w = bedges[b][wrap(j, len)].second;
                } else {
                    w = bedges[b][wrap(j - 1, len)].first;
                    v = bedges[b][wrap(j - 1, len)].second;
                }
                allow_edge(v, w);
                j += jstep;
            }
            int bw = childs[b][wrap(j, len)];
            label[w] = label[bw] = 2;
            labeledge[w] = labeledge[bw] = VW{v, w};
            bestedge[bw] = NO_EDGE;
            j += jstep;
            while (childs[b][wrap(j, len)] != entrychild) {
                int bv = childs[b][wrap(j, len)];
                if (label[bv] == 1) {
                    j += jstep;
                    continue;
                }
                int u = -1;
                if (is_blossom(bv)) {
                    std::vector<int> lv;
                    leaves(bv, lv);
                    for (int x : lv) {
                        if (label[x] != 0) {
                            u = x;
                            break;
                        }
                    }
                    if (u < 0) u = lv.back();
                } else {
                    u = bv;
                }
                if (label[u] != 0) {
                    label[u] = 0;
                    label[mate[blossombase[bv]]] = 0;
                    assign_label(u, 2, labeledge[u].first);
                }
                j += jstep;
            }
        }
        label[b] = 0;
        labeledge[b] = NO_EDGE;
        bestedge[b] = NO_EDGE;
        blossomparent[b] = -1;
        blossombase[b] = -1;
        blossomdual[b] = 0;
        mybestedges[b].clear();
        mybestset[b] = 0;
        childs[b].clear();
        bedges[b].clear();
        inuse[b] = 0;
        freeslots.push_back(b);
    }

    void augment_blossom(int b, int v) {
        int t = v;
        while (blossomparent[t] != b) t = blossomparent[t];
        if (is_blossom(t)) augment_blossom(t, v);
        int len = static_cast<int>(childs[b].size());
        int i = 0;
        while (childs[b][i] != t) ++i;
        int j = i;
        int jstep;
        if (i & 1) {
            j -= len;
            jstep = 1;
        } else {
            jstep = -1;
        }
        while (j != 0) {
            j += jstep;
            t = childs[b][wrap(j, len)];
            int w, x;
            if (jstep == 1) {
                w = bedges[b][wrap(j, len)].first;
                x = bedges[b][wrap(j, len)].second;
            } else {
                x = bedges[b][wrap(j - 1, len)].first;
                w = bedges[b][wrap(j - 1, len)].second;
            }
            if (is_blossom(t)) augment_blossom(t, w);
            j += jstep;
            t = childs[b][wrap(j, len)];
            if (is_blossom(t)) augment_blossom(t, x);
            mate[w] = x;
            mate[x] = w;
        }
        std::rotate(childs[b].begin(), childs[b].begin() + i, childs[b].end());
        std::rotate(bedges[b].begin(), bedges[b].begin() + i, bedges[b].end());
        blossombase[b] = blossombase[childs[b][0]];
        if (blossombase[b] != v) throw std::logic_error("augment_blossom base");
    }

    void augment_matching(int v, int w) {
        std::pair<int, int> starts[2] = {{v, w}, {w, v}};
        for (auto [s, j] : starts) {
            while (true) {
                int bs = inblossom[s];
                if (label[bs] != 1) throw std::logic_error("augment: not S");
                if (is_blossom(bs)) augment_blossom(bs, s);
                mate[s] = j;
                if (labeledge[bs] == NO_EDGE) break;
                int t = labeledge[bs].first;
                int bt = inblossom[t];
                if (label[bt] != 2) throw std::logic_error("augment: not T");
                s = labeledge[bt].first;
                j = labeledge[bt].second;
                if (blossombase[bt] != t) throw std::logic_error("augment: base");
                if (is_blossom(bt)) augment_blossom(bt, j);
                mate[j] = s;
            }
        }
    }

    void verify_optimum() const {
        int64_t vdualoffset = 0;
        int64_t mindual = dualvar.empty() ? 0 : *std::min_element(dualvar.begin(), dualvar.end());
        if (maxcardinality) vdualoffset = std::max<int64_t>(0, -mindual);
        if (mindual + vdualoffset < 0) throw std::logic_error("negative vertex dual");
        for (int b = n; b < 2 * n; ++b)
            if (inuse[b] && blossomdual[b] < 0)
                throw std::logic_error("negative blossom dual");
        for (int i = 0; i < n; ++i) {
            for (const auto& [j, wt] : adj[i]) {
                if (j < i) continue;
                int64_t s = dualvar[i] + dualvar[j] - 2 * wt;
                std::vector<int> ib{i}, jb{j};
                while (blossomparent[ib.back()] >= 0) ib.push_back(blossomparent[ib.back()]);
                while (blossomparent[jb.back()] >= 0) jb.push_back(blossomparent[jb.back()]);
                std::reverse(ib.begin(), ib.end());
                std::reverse(jb.begin(), jb.end());
                for (size_t k = 0; k < std::min(ib.size(), jb.size()); ++k) {
                    if (ib[k] != jb[k]) break;
                    s += 2 * blossomdual[ib[k]];
                }
                if (s < 0) throw std::logic_error("negative slack");
                if (mate[i] == j && s != 0)
                    throw std::logic_error("matched edge with nonzero slack");
            }
        }
        for (int v = 0; v < n; ++v)
            if (mate[v] < 0 && dualvar[v] + vdualoffset != 0)
                throw std::logic_error("single vertex with nonzero dual");
        for (int b = n; b < 2 * n; ++b) {
            if (!inuse[b] || blossomdual[b] <= 0) continue;
            if (bedges[b].size() % 2 != 1)
                throw std::logic_error("positive blossom not full (parity)");
            for (size_t k = 1; k < bedges[b].size(); k += 2) {
                auto [x, y] = bedges[b][k];
                if (mate[x] != y || mate[y] != x)
                    throw std::logic_error("positive blossom not full");
            }
        }
    }

    void run(bool verify) {
        while (true) {
            std::fill(label.begin(), label.end(), 0);
            std::fill(labeledge.begin(), labeledge.end(), NO_EDGE);
            std::fill(bestedge.begin(), bestedge.end(), NO_EDGE);
            for (int b = n; b < 2 * n; ++b) {
                mybestedges[b].clear();
                mybestset[b] = 0;
            }
            std::fill(allowed.begin(), allowed.end(), 0);
            queue.clear();

            for (int v = 0; v < n; ++v)
                if (mate[v] < 0 && label[inblossom[v]] == 0)
                    assign_label(v, 1, -1);

            bool augmented = false;
            while (true) {
                while (!queue.empty() && !augmented) {
                    int v = queue.back();
                    queue.pop_back();
                    for (const auto& [w, wt] : adj[v]) {
                        (void)wt;
                        if (w == v) continue;
                        int bv = inblossom[v];
                        int bw = inblossom[w];
                        if (bv == bw) continue;
                        int64_t kslack = 0;
                        if (!edge_allowed(v, w)) {
                            kslack = slack(v, w);
                            if (kslack <= 0) allow_edge(v, w);
                        }
                        if (edge_allowed(v, w)) {
                            if (label[bw] == 0) {
                                assign_label(w, 2, v);
                            } else if (label[bw] == 1) {
                                int base = scan_blossom(v, w);
                                if (base >= 0) {
                                    add_blossom(base, v, w);
                                } else {
                                    augment_matching(v, w);
                                    augmented = true;
                                    break;
                                }
                            } else if (label[w] == 0) {
                                label[w] = 2;
                                labeledge[w] = VW{v, w};
                            }
                        } else if (label[bw] == 1) {
                            if (bestedge[bv] == NO_EDGE ||
                                kslack < slack(bestedge[bv].first, bestedge[bv].second))
                                bestedge[bv] = VW{v, w};
                        } else if (label[w] == 0) {
                            if (bestedge[w] == NO_EDGE ||
                                kslack < slack(bestedge[w].first, bestedge[w].second))
                                bestedge[w] = VW{v, w};
                        }
                    }
                }
                if (augmented) break;

                int deltatype = -1;
                int64_t delta = 0;
                VW deltaedge = NO_EDGE;
                int deltablossom = -1;

                if (!maxcardinality) {
                    deltatype = 1;
                    delta = *std::min_element(dualvar.begin(), dualvar.end());
                }
                for (int v = 0; v < n; ++v) {
                    if (label[inblossom[v]] == 0 && bestedge[v] != NO_EDGE) {
                        int64_t d = slack(bestedge[v].first, bestedge[v].second);
                        if (deltatype == -1 || d < delta) {
                            delta = d;
                            deltatype = 2;
                            deltaedge = bestedge[v];
                        }
                    }
                }
                auto consider_delta3 = [&](int b) {
                    if (blossomparent[b] == -1 && label[b] == 1 &&
                        bestedge[b] != NO_EDGE) {
                        int64_t ks = slack(bestedge[b].first, bestedge[b].second);
                        int64_t d = ks / 2;  // kslack is even for int weights
                        if (deltatype == -1 || d < delta) {
                            delta = d;
                            deltatype = 3;
                            deltaedge = bestedge[b];
                        }
                    }
                };
                for (int v = 0; v < n; ++v) consider_delta3(v);
                for (int b = n; b < 2 * n; ++b)
                    if (inuse[b]) consider_delta3(b);
                for (int b = n; b < 2 * n; ++b) {
                    if (inuse[b] && blossomparent[b] == -1 && label[b] == 2 &&
                        (deltatype == -1 || blossomdual[b] < delta)) {
                        delta = blossomdual[b];
                        deltatype = 4;
                        deltablossom = b;
                    }
                }
                if (deltatype == -1) {
                    // No further improvement possible; max-cardinality optimum.
                    deltatype = 1;
                    delta = std::max<int64_t>(
                        0, *std::min_element(dualvar.begin(), dualvar.end()));
                }

                for (int v = 0; v < n; ++v) {
                    int lb = label[inblossom[v]];
                    if (lb == 1)
                        dualvar[v] -= delta;
                    else if (lb == 2)
                        dualvar[v] += delta;
                }
                for (int b = n; b < 2 * n; ++b) {
                    if (!inuse[b] || blossomparent[b] != -1) continue;
                    if (label[b] == 1)
                        blossomdual[b] += delta;
                    else if (label[b] == 2)
                        blossomdual[b] -= delta;
                }

                if (deltatype == 1) {
                    break;
                } else if (deltatype == 2) {
                    auto [dv, dw] = deltaedge;
                    allow_edge(dv, dw);
                    queue.push_back(dv);
                } else if (deltatype == 3) {
                    auto [dv, dw] = deltaedge;
                    allow_edge(dv, dw);
                    queue.push_back(dv);
                } else {
                    expand_blossom(deltablossom, false);
                }
            }

            for (int v = 0; v < n; ++v)
                if (mate[v] >= 0 && mate[mate[v]] != v)
                    throw std::logic_error("asymmetric matching");

            if (!augmented) break;

            for (int b = n; b < 2 * n; ++b) {
                if (inuse[b] && blossomparent[b] == -1 && label[b] == 1 &&
                    blossomdual[b] == 0)
                    expand_blossom(b, true);
            }
        }
        if (verify) verify_optimum();
    }
};

// edges: (i, j, weight) with integer weights.  Returns mate array of length n
// (mate[v] = matched partner or -1).
py::array_t<int> max_weight_matching(
    int n, const std::vector<std::tuple<int, int, int64_t>>& edges,
    bool maxcardinality, bool verify) {
    if (n < 0) throw std::invalid_argument("n must be non-negative");
    py::array_t<int> out(n);
    auto buf = out.mutable_unchecked<1>();
    if (n == 0 || edges.empty()) {
        for (int v = 0; v < n; ++v) buf(v) = -1;
        return out;
    }
    Matcher m(n, edges, maxcardinality);
    m.run(verify);
    for (int v = 0; v < n; ++v) buf(v) = m.mate[v];
    return out;
}

}  // namespace

PYBIND11_MODULE(_mwblossom, mod) {
    mod.doc() = "Exact maximum-weight general-graph matching (blossom method)";
    mod.def("max_weight_matching", &max_weight_matching, py::arg("n"),
            py::arg("edges"), py::arg("maxcardinality") = false,
            py::arg("verify") = false);
}
