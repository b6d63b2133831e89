from tensor_engine.repositories import CheckpointBinaryRepository
from tensor_engine.services import CheckpointService


def checkpoint_service():
    return CheckpointService(CheckpointBinaryRepository)
