#include "sire/reference.hpp"

#include <cmath>

namespace sire {

namespace {

Eigen::MatrixXd rho(int order, double angle)
{
    if (order == 0) return Eigen::MatrixXd::Identity(1, 1);
    return irrep(order, angle);
}

}  // namespace

Matrix<double> gem_conv_reference(const GemConv<double>& layer, const TangentFrameAtlas& atlas,
                                  std::span<const double> params, const Matrix<double>& in)
{
    const auto& ins = layer.in_slots();
    const auto& outs = layer.out_slots();
    const int n = static_cast<int>(atlas.e1.size());
    Matrix<double> out = Matrix<double>::Zero(n, layer.out_signature().dim());
    for (int i = 0; i < n; ++i) {
        for (int o = 0; o < static_cast<int>(outs.size()); ++o) {
            const int on = outs[o].order, dn = outs[o].dim();
            Eigen::VectorXd acc = Eigen::VectorXd::Zero(dn);
            for (int f = 0; f < static_cast<int>(ins.size()); ++f) {
                const int m = ins[f].order, dm = ins[f].dim();
                Eigen::MatrixXd c(dn, dm);
                const int nb = layer.neighbor_index(o, f);
                for (int r = 0; r < dn; ++r)
                    for (int k = 0; k < dm; ++k) c(r, k) = params[nb + r * dm + k];

                const int sb = layer.self_index(o, f);
                const Eigen::VectorXd own = in.row(i).segment(ins[f].offset, dm).transpose();
                if (sb >= 0) {
                    if (on == 0) {
                        acc += params[sb] * own;
                    } else {
                        Eigen::Matrix2d s;
                        s << params[sb], -params[sb + 1], params[sb + 1], params[sb];
                        acc += s * own;
                    }
                }
                for (int e = atlas.offsets[i]; e < atlas.offsets[i + 1]; ++e) {
                    const int j = atlas.target[e];
                    const Eigen::VectorXd fj = in.row(j).segment(ins[f].offset, dm).transpose();
                    const Eigen::MatrixXd kernel = rho(on, atlas.theta[e]) * c * rho(m, -atlas.theta[e]);
                    acc += kernel * (rho(m, atlas.transport[e]) * fj);
                }
            }
            const int b = layer.bias_index(o);
            if (b >= 0) acc[0] += params[b];
            out.row(i).segment(outs[o].offset, dn) = acc.transpose();
        }
    }
    return out;
}

Matrix<double> gat_conv_reference(int in_channels, int out_channels, const IcosphereMesh& mesh,
                                  std::span<const double> params, const Matrix<double>& in)
{
    const std::size_t w = static_cast<std::size_t>(in_channels) * out_channels;
    Eigen::Map<const Matrix<double>> wd(params.data(), out_channels, in_channels);
    Eigen::Map<const Matrix<double>> ws(params.data() + w, out_channels, in_channels);
    Eigen::Map<const Eigen::VectorXd> a(params.data() + 2 * w, out_channels);
    Eigen::Map<const Eigen::VectorXd> bias(params.data() + 2 * w + out_channels, out_channels);
    const int n = mesh.num_vertices();
    Matrix<double> out(n, out_channels);
    for (int i = 0; i < n; ++i) {
        std::vector<int> hood{i};
        hood.insert(hood.end(), mesh.neighbors[i].begin(), mesh.neighbors[i].end());
        const Eigen::VectorXd hi = wd * in.row(i).transpose();
        std::vector<double> logits;
        for (int j : hood) {
            const Eigen::VectorXd z = hi + ws * in.row(j).transpose();
            logits.push_back(a.dot(z.unaryExpr([](double x) { return x > 0 ? x : 0.2 * x; })));
        }
        double total = 0.0;
        for (double l : logits) total += std::exp(l);
        Eigen::VectorXd acc = bias;
        for (std::size_t k = 0; k < hood.size(); ++k)
            acc += std::exp(logits[k]) / total * (ws * in.row(hood[k]).transpose());
        out.row(i) = acc.transpose();
    }
    return out;
}

}  // namespace sire
