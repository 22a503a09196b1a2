use crate::dataset::{Dataset, Entity, Interactions};
use crate::splits::Split;
use crate::{MmrecError, Result};

/// A dataset seen through one split's training interactions. Interaction
/// profiles used as model inputs always come from here.
#[derive(Clone, Debug)]
pub struct DataView<'a> {
    pub data: &'a Dataset,
    pub train: Interactions,
    item_users: Vec<Vec<usize>>,
}

impl<'a> DataView<'a> {
    pub fn new(data: &'a Dataset, split: &Split) -> Result<Self> {
        if split.n_users != data.n_users() || split.n_items != data.n_items() {
            return Err(MmrecError::InvalidData(format!(
                "split is {}x{}, dataset is {}x{}",
                split.n_users,
                split.n_items,
                data.n_users(),
                data.n_items()
            )));
        }
        Ok(Self::from_train(data, split.train_interactions()))
    }

    pub fn from_train(data: &'a Dataset, train: Interactions) -> Self {
        let item_users = train.by_item();
        DataView {
            data,
            train,
            item_users,
        }
    }

    pub fn count(&self, entity: Entity) -> usize {
        match entity {
            Entity::User => self.data.n_users(),
            Entity::Item => self.data.n_items(),
        }
    }

    /// Training profile: a user's items or an item's users.
    pub fn profile(&self, entity: Entity, e: usize) -> &[usize] {
        match entity {
            Entity::User => self.train.user_items(e),
            Entity::Item => &self.item_users[e],
        }
    }

    /// Training popularity φ(i) = |U_i| / |U|.
    pub fn popularity(&self) -> Vec<f64> {
        let n = self.data.n_users().max(1) as f64;
        self.item_users.iter().map(|u| u.len() as f64 / n).collect()
    }
}
