#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "toposcope/io.hpp"

namespace toposcope {

enum ExitCode : int {
    kExitOk = 0,
    kExitInput = 1,
    kExitNoGap = 2,        // NoGap, Obstruction, BranchCut
    kExitNumerical = 3,    // MeshTooCoarse, NonConvergence, AnchorDegenerate, oracle disagreement
};

struct RunConfig {
    std::string command;  // chern | z2 | floquet | edge | sweep
    std::string mode;     // floquet: winding | z2 | z2-3d | spectrum
    std::string model_path;
    std::vector<int> grid;  // empty: command default
    int time_grid = 24;
    int steps = 200;
    double tol = 1e-6;
    std::string out;
    int threads = 1;
    unsigned long long seed = 0;
    bool oracle = false;
    bool debug_gerbe = false;
    int dim = 0;                     // z2: 0 = from the model
    std::string method = "sewing";   // z2: sewing | gerbe
    std::optional<double> fermi;
    std::optional<double> eps;       // floquet: single quasi-energy instead of every gap
    std::optional<double> energy;    // edge: counting level
    int open_axis = 0;
    int width = 24;
    int nk = 96;
    bool floquet = false;            // edge: strip of the drive
    std::vector<std::string> params; // sweep: name=lo:hi:n
    std::string invariant = "chern"; // sweep: chern | z2
};

Json config_json(const RunConfig& c);

// Maps library exceptions onto exit codes.
int exit_code_for(const std::exception& e);

// Executes a parsed configuration. Reports and tables go to `out` unless
// c.out names a file; errors are written to `err` as one JSON object.
int run_command(const RunConfig& c, std::ostream& out, std::ostream& err);

// Full command line, argv[0] included.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace toposcope
