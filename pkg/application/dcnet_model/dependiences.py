from dcnet_model.repositories import ModelConfigJsonRepository
from dcnet_model.services import ModelService
from tensor_engine.dependiences import checkpoint_service


def model_service():
    return ModelService(checkpoint_service(), ModelConfigJsonRepository)
