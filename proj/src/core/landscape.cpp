#include "prime/landscape.hpp"

namespace prime {

double grid_value(std::size_t i, std::size_t n, double lo, double hi) {
    if (n == 1) return lo;
    const double span = static_cast<double>(n - 1);
    return (lo * static_cast<double>(n - 1 - i) + hi * static_cast<double>(i)) / span;
}

std::string loss_landscape_csv(const LandscapeConfig& cfg) {
    if (cfg.points < 1) fail(ErrorKind::Usage, "landscape needs at least one grid point");
    if (!(cfg.lo < cfg.hi) && cfg.points > 1) fail(ErrorKind::Usage, "landscape range is empty");
    cfg.margin.validate();
    std::string out = "mode,s_qp,s_qn,loss,d_sap,d_san,region\n";
    for (int mode = 0; mode < 2; ++mode) {
        const char* name = mode == 0 ? "fixed" : "dynamic";
        for (std::size_t i = 0; i < cfg.points; ++i) {
            const double sp = grid_value(i, cfg.points, cfg.lo, cfg.hi);
            for (std::size_t j = 0; j < cfg.points; ++j) {
                const double sn = grid_value(j, cfg.points, cfg.lo, cfg.hi);
                const TripletGrad g = mode == 0 ? triplet_fixed(sp, sn, cfg.margin.fixed_margin)
                                                : triplet_clipped_dynamic(sp, sn, cfg.margin);
                out += name;
                for (double v : {sp, sn, g.loss_value, g.d_sap, g.d_san}) {
                    out += ',';
                    out += format_double(v, 12, false);
                }
                out += ',';
                out += to_string(g.region);
                out += '\n';
            }
        }
    }
    return out;
}

}  // namespace prime
