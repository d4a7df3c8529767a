#ifndef ACL_ACL_HPP
#define ACL_ACL_HPP

#include "acl/tensor.hpp"
#include "acl/ops.hpp"
#include "acl/grad_check.hpp"
#include "acl/losses.hpp"
#include "acl/rng.hpp"
#include "acl/model.hpp"
#include "acl/optim.hpp"
#include "acl/augment.hpp"
#include "acl/contrastive.hpp"
#include "acl/adversary.hpp"
#include "acl/dataset.hpp"
#include "acl/io.hpp"
#include "acl/checkpoint.hpp"
#include "acl/pretrain.hpp"
#include "acl/eval.hpp"
#include "acl/finetune.hpp"
#include "acl/semisup.hpp"
#include "acl/config.hpp"

#endif  // ACL_ACL_HPP
