from dataset_io.repositories import DatasetBinaryRepository, ExternalNpzRepository
from dataset_io.services import DatasetService


def dataset_service():
    return DatasetService(DatasetBinaryRepository, ExternalNpzRepository)
