#pragma once

// Umbrella header: learning and certifying decentralized primary-frequency
// controllers for lossless swing-equation networks.

#include "swingctl/artifacts.hpp"
#include "swingctl/controller.hpp"
#include "swingctl/errors.hpp"
#include "swingctl/linalg.hpp"
#include "swingctl/lyapunov.hpp"
#include "swingctl/network.hpp"
#include "swingctl/parallel.hpp"
#include "swingctl/rng.hpp"
#include "swingctl/sim.hpp"
#include "swingctl/train.hpp"
